"""One-parameter families of hidden Markov models.

A family maps ``theta`` to a model and supplies the derivatives ``M'(y)``
and ``M''(y)`` of the transition-observation matrices.  Finite-alphabet
families return ``(|Y|, Q, Q)`` tables; Gaussian families are described by
edge means ``means(theta)`` and their derivatives, from which the matrix
derivatives at any output ``y`` follow in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ModelValidationError, PiNotConstant
from .markov_core import HiddenMarkovModel, MarkovChain

FD_STEP = 1e-4
PI_GRID = 11
PI_TOL = 1e-8


def _project_zero_sum(D: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Remove the row-sum residual of ``sum_y D(y) 1`` over valid edges."""
    valid = P > 0
    resid = D.sum(axis=(0, 2))  # per source state
    count = D.shape[0] * valid.sum(axis=1)
    return D - (resid / count)[None, :, None] * valid[None]


@dataclass(frozen=True)
class ParametrizedFamily:
    """``theta -> HiddenMarkovModel`` with matrix derivatives.

    Parameters
    ----------
    build : callable
        Returns the model at ``theta``.
    domain : (float, float)
        Closed parameter interval.
    theta_star : float, optional
        High-noise point, if the family has one.
    dM, d2M : callable, optional
        Finite alphabets: ``theta -> (|Y|, Q, Q)`` derivative tables.
        Central differences with step ``FD_STEP`` are used when omitted.
    dmeans, d2means : callable, optional
        Gaussian alphabets: derivatives of the edge means.
    """

    build: Callable[[float], HiddenMarkovModel]
    domain: tuple[float, float]
    theta_star: float | None = None
    dM: Callable | None = None
    d2M: Callable | None = None
    dmeans: Callable | None = None
    d2means: Callable | None = None
    name: str = "family"

    def model_at(self, theta: float) -> HiddenMarkovModel:
        lo, hi = self.domain
        if not lo - 1e-12 <= theta <= hi + 1e-12:
            raise ValueError(f"theta={theta} outside domain [{lo}, {hi}]")
        return self.build(float(theta))

    @property
    def is_gaussian(self) -> bool:
        return self.model_at(self._inside()).is_gaussian

    def _inside(self) -> float:
        return self.theta_star if self.theta_star is not None else 0.5 * sum(self.domain)

    def _fd(self, fn, theta, order):
        h = FD_STEP
        if order == 1:
            return (fn(theta + h) - fn(theta - h)) / (2 * h)
        return (fn(theta + h) - 2 * fn(theta) + fn(theta - h)) / h**2

    # finite alphabets ---------------------------------------------------
    def matrices(self, theta: float) -> np.ndarray:
        return self.model_at(theta).matrices()

    def derivative(self, theta: float, order: int = 1) -> np.ndarray:
        """``M'(y)`` (order 1) or ``M''(y)`` (order 2) for every symbol."""
        fn = self.dM if order == 1 else self.d2M
        if fn is not None:
            return np.asarray(fn(theta), dtype=float)
        D = self._fd(lambda t: self.build(t).matrices(), theta, order)
        return _project_zero_sum(D, self.model_at(theta).P)

    # Gaussian alphabets -------------------------------------------------
    def mean_derivative(self, theta: float, order: int = 1) -> np.ndarray:
        fn = self.dmeans if order == 1 else self.d2means
        if fn is not None:
            return np.asarray(fn(theta), dtype=float)
        return self._fd(lambda t: self.build(t).means, theta, order)

    def derivative_at(self, theta: float, ys, order: int = 1) -> np.ndarray:
        """Gaussian ``M'(y)`` or ``M''(y)`` at each output in ``ys``."""
        model = self.model_at(theta)
        ys = np.asarray(ys, dtype=float)
        var = model.variance
        M = model.matrices_at(ys)
        z = (ys[:, None, None] - model.means[None]) / var
        m1 = self.mean_derivative(theta, 1)
        if order == 1:
            return M * z * m1
        m2 = self.mean_derivative(theta, 2)
        return M * ((z * m1) ** 2 - m1**2 / var + z * m2)


def check_pi_constant(family: ParametrizedFamily, points: int = PI_GRID,
                      tol: float = PI_TOL) -> float:
    """Verify that the stationary law does not move over the domain.

    Returns the largest deviation found on an evenly spaced grid.

    Raises
    ------
    PiNotConstant
        If the deviation exceeds ``tol``.
    """
    grid = np.linspace(*family.domain, points)
    pis = np.array([family.model_at(t).pi for t in grid])
    worst = float(np.abs(pis - pis[0]).max())
    if worst > tol:
        raise PiNotConstant(f"stationary law varies by {worst:.3g} over the domain")
    return worst


def _bsc_kernel(P: np.ndarray, eps: float) -> np.ndarray:
    n = P.shape[0]
    h = np.zeros((n, n, 2))
    for j in range(n):
        h[:, j, j % 2] = 1 - eps
        h[:, j, 1 - j % 2] = eps
    h[P == 0] = 0.0
    return h


def bsc_markov_family(P, domain=(-0.5, 0.5)) -> ParametrizedFamily:
    """Binary chain observed through a BSC with crossover ``1/2 - theta``.

    The symbol emitted on a transition ``i -> j`` is the destination state
    ``j``, flipped with probability ``1/2 - theta``.
    """
    chain = MarkovChain(np.asarray(P, dtype=float))
    if chain.n_states != 2:
        raise ModelValidationError("P", "BSC-Markov family needs a two-state chain")
    P = chain.P
    sign = _bsc_kernel(P, 0.0) - _bsc_kernel(P, 1.0)  # +1 on the true symbol
    d1 = np.moveaxis(P[:, :, None] * sign, 2, 0)

    def build(theta):
        return HiddenMarkovModel(chain, h=_bsc_kernel(P, 0.5 - theta), alphabet=("0", "1"))

    return ParametrizedFamily(build, tuple(domain), theta_star=0.0,
                              dM=lambda t: d1, d2M=lambda t: np.zeros_like(d1),
                              name="bsc")


def gaussian_family(P, means, variance: float = 1.0,
                    domain=(-2.0, 2.0)) -> ParametrizedFamily:
    """Edge means ``theta * means`` in Gaussian noise of fixed variance."""
    chain = MarkovChain(np.asarray(P, dtype=float))
    m0 = np.where(chain.P > 0, np.asarray(means, dtype=float), 0.0)

    def build(theta):
        return HiddenMarkovModel(chain, means=theta * m0, variance=variance)

    return ParametrizedFamily(build, tuple(domain), theta_star=0.0,
                              dmeans=lambda t: m0, d2means=lambda t: np.zeros_like(m0),
                              name="gaussian")


def kernel_perturbation_family(P, s, a, b=None, domain=None) -> ParametrizedFamily:
    """``h_ij(y) = s(y) + theta a_ij(y) + theta^2 b_ij(y) / 2``.

    ``a`` and ``b`` have shape ``(Q, Q, |Y|)`` and sum to zero over ``y`` on
    every edge, so the chain (and hence ``pi``) does not depend on ``theta``.
    The default domain is ``[-t, t]`` with ``t`` halved from 1 until every
    kernel is nonnegative on a grid over the interval.
    """
    chain = MarkovChain(np.asarray(P, dtype=float))
    P = chain.P
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.zeros_like(a) if b is None else np.asarray(b, dtype=float)
    valid = P > 0
    for name, arr in (("a", a), ("b", b)):
        if arr.shape != valid.shape + s.shape:
            raise ModelValidationError(name, f"expected shape {valid.shape + s.shape}")
        if np.abs(arr.sum(axis=2)[valid]).max() > 1e-12:
            raise ModelValidationError(name, "must sum to zero over the alphabet on every edge")
    a = np.where(valid[..., None], a, 0.0)
    b = np.where(valid[..., None], b, 0.0)
    if domain is None:
        t = 1.0
        while t > 1e-9 and any(np.any((s + x * a + x * x * b / 2)[valid] < 0)
                               for x in np.linspace(-t, t, 41)):
            t *= 0.5
        domain = (-t, t)

    def build(theta):
        h = np.where(valid[..., None], s + theta * a + theta**2 * b / 2, 0.0)
        return HiddenMarkovModel(chain, h=h)

    d1 = np.moveaxis(P[:, :, None] * a, 2, 0)
    d2 = np.moveaxis(P[:, :, None] * b, 2, 0)
    return ParametrizedFamily(build, tuple(domain), theta_star=0.0,
                              dM=lambda t: d1 + t * d2, d2M=lambda t: d2,
                              name="perturbation")


def random_perturbation_family(n_states: int, n_symbols: int, rng) -> ParametrizedFamily:
    """Random positive chain and kernel directions around a common ``s``."""
    P = rng.uniform(0.1, 1.0, (n_states, n_states))
    P /= P.sum(axis=1, keepdims=True)
    s = rng.uniform(0.2, 1.0, n_symbols)
    s /= s.sum()
    a = rng.normal(size=(n_states, n_states, n_symbols))
    a -= a.mean(axis=2, keepdims=True)
    b = rng.normal(size=(n_states, n_states, n_symbols))
    b -= b.mean(axis=2, keepdims=True)
    return kernel_perturbation_family(P, s, a, b)


def family_from_dict(spec: dict, model: HiddenMarkovModel) -> ParametrizedFamily:
    """Family described in a model file's ``"family"`` entry.

    ``{"kind": "bsc"}`` and ``{"kind": "gaussian", "means": ...}`` use the
    chain of ``model``; ``{"kind": "perturbation", "s": ..., "a": ...,
    "b": ...}`` takes kernel directions indexed ``[i][j][y]``.
    """
    kind = spec.get("kind")
    if kind == "bsc":
        return bsc_markov_family(model.P)
    if kind == "gaussian":
        means = spec.get("means", model.means)
        if means is None:
            raise ModelValidationError("family.means", "missing")
        return gaussian_family(model.P, means, float(spec.get("variance", 1.0)))
    if kind == "perturbation":
        for key in ("s", "a"):
            if key not in spec:
                raise ModelValidationError(f"family.{key}", "missing")
        return kernel_perturbation_family(model.P, spec["s"], spec["a"], spec.get("b"))
    raise ModelValidationError("family.kind", f"unknown family kind {kind!r}")


def binary_entropy(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return -p * math.log(p) - (1 - p) * math.log(1 - p)
