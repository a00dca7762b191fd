"""Finite-state Markov chains, hidden Markov models and contraction tools.

Observations attach to transitions: the symbol emitted while moving from
state ``i`` to state ``j`` has law ``h[i, j, :]`` (finite alphabet) or
``N(means[i, j], variance)`` (Gaussian alphabet).  The transition-observation
matrices are ``M(y)[i, j] = P[i, j] * h[i, j](y)``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import (
    ModelValidationError,
    NonPositiveVector,
    NonPrimitiveChain,
    NotPrimitiveWithin,
    ZeroEntry,
    ZeroObservationProbability,
)

ROW_TOL = 1e-12
ENUMERATION_LIMIT = 10**6


def wielandt_bound(n_states: int) -> int:
    return (n_states - 1) ** 2 + 1


def primitivity_index(P: np.ndarray, k_max: int | None = None) -> int | None:
    """Smallest ``k <= k_max`` with ``P**k`` entrywise positive, else None."""
    P = np.asarray(P, dtype=float)
    if k_max is None:
        k_max = wielandt_bound(P.shape[0])
    support = (P > 0).astype(np.int64)
    power = support.copy()
    for k in range(1, k_max + 1):
        if power.all():
            return k
        power = ((power @ support) > 0).astype(np.int64)
    return None


def is_irreducible(P: np.ndarray) -> bool:
    n = P.shape[0]
    reach = ((np.eye(n) + (P > 0)) > 0).astype(np.int64)
    power = reach.copy()
    for _ in range(max(n - 1, 1)):
        power = ((power @ reach) > 0).astype(np.int64)
    return bool(power.all())


@dataclass(frozen=True)
class MarkovChain:
    """Row-stochastic transition matrix over named states."""

    P: np.ndarray
    states: tuple = ()

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ModelValidationError("P", f"must be square, got shape {P.shape}")
        for i, row in enumerate(P):
            if np.any(row < 0):
                raise ModelValidationError(f"P[{i}]", "negative transition probability")
            if abs(row.sum() - 1.0) > ROW_TOL:
                raise ModelValidationError(f"P[{i}]", f"row sums to {row.sum():.15g}, not 1")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        states = tuple(self.states) or tuple(str(i) for i in range(P.shape[0]))
        if len(states) != P.shape[0]:
            raise ModelValidationError("states", "length does not match P")
        object.__setattr__(self, "states", states)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @cached_property
    def pi(self) -> np.ndarray:
        return stationary_distribution(self, require_primitive=False)

    def edges(self) -> list[tuple[int, int]]:
        return [tuple(e) for e in np.argwhere(self.P > 0)]

    def entropy_rate(self) -> float:
        """-sum_ij pi(i) p_ij ln p_ij, in nats."""
        P = self.P
        logs = np.log(np.where(P > 0, P, 1.0))
        return float(-np.sum(self.pi[:, None] * P * logs))


def stationary_distribution(chain, require_primitive: bool = True,
                            tol: float = 1e-12, max_iter: int = 10**6) -> np.ndarray:
    """Stationary law of a chain by power iteration on ``P^T``.

    Parameters
    ----------
    chain : MarkovChain or array_like
    require_primitive : bool
        If False, irreducible periodic chains are accepted; the iteration then
        runs on the lazy chain ``(I + P) / 2`` which has the same fixed point.

    Raises
    ------
    NonPrimitiveChain
        No power ``P**k`` with ``k`` up to the Wielandt bound is positive (or,
        with ``require_primitive=False``, the chain is reducible).
    """
    P = chain.P if isinstance(chain, MarkovChain) else np.asarray(chain, dtype=float)
    n = P.shape[0]
    if primitivity_index(P) is None:
        if require_primitive or not is_irreducible(P):
            raise NonPrimitiveChain("transition matrix is not primitive")
        P = 0.5 * (np.eye(n) + P)

    # repeated squaring gives a warm start; the plain iteration then polishes
    A = P.copy()
    for _ in range(64):
        if np.ptp(A, axis=0).max() < 1e-15:
            break
        A = A @ A
        A /= A.sum(axis=1, keepdims=True)
    pi = A.mean(axis=0)
    pi /= pi.sum()
    best = np.inf
    stall = 0
    for _ in range(max_iter):
        nxt = pi @ P
        nxt /= nxt.sum()
        change = np.abs(nxt - pi).sum()
        pi = nxt
        if change <= tol * 1e-3:
            break
        if change < best:
            best, stall = change, 0
        else:
            stall += 1
            if stall > 50 and change < tol:
                break
    return pi


@dataclass(frozen=True)
class HiddenMarkovModel:
    """Markov chain observed through a per-transition memoryless channel.

    Exactly one of ``h`` (shape ``(Q, Q, |Y|)``) or ``means`` (shape
    ``(Q, Q)``, Gaussian outputs with common ``variance``) is given.
    """

    chain: MarkovChain
    h: np.ndarray | None = None
    alphabet: tuple = ()
    means: np.ndarray | None = None
    variance: float = 1.0

    def __post_init__(self):
        if not isinstance(self.chain, MarkovChain):
            object.__setattr__(self, "chain", MarkovChain(self.chain))
        P = self.chain.P
        n = P.shape[0]
        valid = P > 0
        if (self.h is None) == (self.means is None):
            raise ModelValidationError("h", "give exactly one of a finite kernel or Gaussian means")
        if self.h is not None:
            h = np.array(self.h, dtype=float)
            if h.ndim != 3 or h.shape[:2] != (n, n):
                raise ModelValidationError("h", f"expected shape ({n}, {n}, |Y|), got {h.shape}")
            for i, j in itertools.product(range(n), repeat=2):
                name = f"h[{self.chain.states[i]}->{self.chain.states[j]}]"
                if valid[i, j]:
                    if np.any(h[i, j] < 0):
                        raise ModelValidationError(name, "negative probability")
                    if abs(h[i, j].sum() - 1.0) > ROW_TOL:
                        raise ModelValidationError(name, f"sums to {h[i, j].sum():.15g}, not 1")
                elif np.any(h[i, j] != 0):
                    raise ModelValidationError(name, "kernel given on an invalid transition")
            h.setflags(write=False)
            object.__setattr__(self, "h", h)
            alphabet = tuple(self.alphabet) or tuple(str(y) for y in range(h.shape[2]))
            if len(alphabet) != h.shape[2]:
                raise ModelValidationError("alphabet", "length does not match kernel")
            object.__setattr__(self, "alphabet", alphabet)
        else:
            means = np.array(self.means, dtype=float)
            if means.shape != (n, n):
                raise ModelValidationError("alphabet.gaussian.means", f"expected shape ({n}, {n})")
            if not np.all(np.isfinite(means)):
                raise ModelValidationError("alphabet.gaussian.means", "means must be finite")
            if not self.variance > 0:
                raise ModelValidationError("alphabet.gaussian.variance", "must be positive")
            means = np.where(valid, means, 0.0)
            means.setflags(write=False)
            object.__setattr__(self, "means", means)

    @property
    def P(self) -> np.ndarray:
        return self.chain.P

    @property
    def n_states(self) -> int:
        return self.chain.n_states

    @property
    def is_gaussian(self) -> bool:
        return self.means is not None

    @property
    def n_symbols(self) -> int:
        if self.is_gaussian:
            raise TypeError("Gaussian model has a continuous alphabet")
        return self.h.shape[2]

    @cached_property
    def pi(self) -> np.ndarray:
        return self.chain.pi

    @cached_property
    def _matrices(self) -> np.ndarray:
        Ms = np.moveaxis(self.P[:, :, None] * self.h, 2, 0).copy()
        Ms.setflags(write=False)
        return Ms

    def matrices(self) -> np.ndarray:
        """All ``M(y)`` stacked along axis 0 (finite alphabets only)."""
        if self.is_gaussian:
            raise TypeError("Gaussian model has no finite matrix table")
        return self._matrices

    def matrix(self, y) -> np.ndarray:
        if self.is_gaussian:
            return self.matrices_at(np.array([y], dtype=float))[0]
        return self._matrices[int(y)]

    def matrices_at(self, ys: np.ndarray) -> np.ndarray:
        """Gaussian ``M(y)`` for an array of outputs, shape ``(N, Q, Q)``."""
        ys = np.asarray(ys, dtype=float)
        z = ys[:, None, None] - self.means[None]
        dens = np.exp(-0.5 * z * z / self.variance) / math.sqrt(2 * math.pi * self.variance)
        return self.P[None] * dens

    def factorization(self, tol: float = 1e-10) -> np.ndarray | None:
        """``s(y)`` when ``M(y) = s(y) P`` for every y, else None.

        For Gaussian models this holds only when all edge means coincide, and
        the return value is then the common mean as a length-1 array.
        """
        valid = self.P > 0
        if self.is_gaussian:
            m = self.means[valid]
            return np.array([m[0]]) if np.ptp(m) <= tol else None
        per_edge = self.h[valid]  # (|V|, |Y|)
        s = per_edge[0]
        if np.max(np.abs(per_edge - s)) <= tol:
            return s.copy()
        return None


def hilbert_distance(u, v) -> float:
    """Hilbert projective distance ``ln max_ij u_i v_j / (v_i u_j)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError("vectors differ in dimension")
    if np.any(u <= 0) or np.any(v <= 0):
        raise NonPositiveVector("Hilbert distance needs strictly positive vectors")
    r = np.log(u) - np.log(v)
    return float(r.max() - r.min())


def birkhoff_coefficients(M) -> tuple[float, float]:
    """Return ``(phi, tau)`` for an entrywise positive matrix.

    ``phi = min M_ik M_jl / (M_jk M_il)`` over all index quadruples and
    ``tau = (1 - sqrt(phi)) / (1 + sqrt(phi))``.
    """
    M = np.asarray(M, dtype=float)
    if np.any(M <= 0):
        raise ZeroEntry("Birkhoff coefficient needs a positive matrix; use a k-step product")
    def cross_min(L):
        # L[i,k] + L[j,l] - L[j,k] - L[i,l] over all quadruples
        return (L[:, None, :, None] + L[None, :, None, :]
                - L[None, :, :, None] - L[:, None, None, :]).min()

    # both orientations, so tau(M) == tau(M.T) holds bit for bit
    L = np.log(M)
    phi = float(min(1.0, np.exp(min(cross_min(L), cross_min(L.T)))))
    root = math.sqrt(phi)
    return phi, (1.0 - root) / (1.0 + root)


@dataclass(frozen=True)
class NotApplicable:
    """Marker returned where a bound is undefined rather than inventing one."""

    reason: str


@dataclass(frozen=True)
class PrimitivityCertificate:
    k: int
    epsilon: float
    delta: float
    gamma: float
    C: float
    exact: bool = True
    contraction_checked: bool = True
    sequences_checked: int = 0

    def forgetting_bound(self, steps) -> np.ndarray:
        """Bound on the Hilbert distance between two forward recursions."""
        steps = np.asarray(steps, dtype=float)
        return self.C * self.gamma ** (steps - self.k)

    def burn_in(self) -> int:
        # shave rounding noise so that e.g. epsilon = 0.04 gives exactly 1250
        return int(math.ceil(50 * self.k / self.epsilon * (1 - 1e-12)))


def _k_step_products(Ms: np.ndarray, k: int) -> np.ndarray:
    prods = Ms
    for _ in range(k - 1):
        prods = np.einsum("aij,bjk->abik", prods, Ms).reshape(-1, *Ms.shape[1:])
    return prods


def primitivity_certificate(model: HiddenMarkovModel, k_max: int | None = None,
                            sample_size: int = 512, seed: int = 0):
    """Certify ``(epsilon, k)``-primitivity by enumerating ``Y**k``.

    Returns a :class:`PrimitivityCertificate`, or :class:`NotApplicable` for
    Gaussian outputs.  When ``|Y|**k`` exceeds ``ENUMERATION_LIMIT`` the
    epsilon is the Lemma-style lower bound ``delta**k / k`` and ``exact`` is
    False.
    """
    if model.is_gaussian:
        return NotApplicable("Gaussian likelihood ratios are unbounded")
    P = model.P
    valid = P > 0
    Ms = model.matrices()
    edge_vals = Ms[:, valid]
    if np.any(edge_vals <= 0):
        raise ZeroObservationProbability("some h_ij(y) vanishes on a valid transition")
    delta = float(edge_vals.min())
    if k_max is None:
        k_max = wielandt_bound(model.n_states)
    k = primitivity_index(P, k_max)
    if k is None:
        raise NotPrimitiveWithin(f"no positive power of P up to k={k_max}")

    n_sym = Ms.shape[0]
    rng = np.random.default_rng(seed)
    exact = n_sym**k <= ENUMERATION_LIMIT
    if exact:
        if k == 1:
            min_entry = float(Ms.min())
            sample = Ms
        else:
            prefix = _k_step_products(Ms, k - 1)
            min_entry = math.inf
            for y in range(n_sym):
                min_entry = min(min_entry, float((prefix @ Ms[y]).min()))
            idx = rng.integers(0, n_sym, size=(min(sample_size, n_sym**k), k))
            sample = np.array([np.linalg.multi_dot([Ms[y] for y in seq]) if k > 1 else Ms[seq[0]]
                               for seq in idx])
        epsilon = min_entry / k
    else:
        epsilon = delta**k / k
        idx = rng.integers(0, n_sym, size=(sample_size, k))
        sample = np.array([np.linalg.multi_dot([Ms[y] for y in seq]) for seq in idx])

    gamma = math.exp(-2 * epsilon)
    C = -2 * math.log(k * epsilon) * gamma ** (-k)
    bound = math.exp(-2 * k * epsilon)
    ok = all(birkhoff_coefficients(S)[1] <= bound + 1e-12 for S in sample)
    return PrimitivityCertificate(k=k, epsilon=epsilon, delta=delta, gamma=gamma, C=C,
                                  exact=exact, contraction_checked=ok,
                                  sequences_checked=len(sample))


def block_probability(pi, matrices, ys: Sequence) -> float:
    """``pi^T M(y_1) ... M(y_n) 1`` (a density for Gaussian models).

    ``matrices`` is a model or a ``(|Y|, Q, Q)`` table.  Long blocks should go
    through the normalized forward recursion instead.
    """
    v = np.array(pi, dtype=float)
    for y in ys:
        if isinstance(matrices, HiddenMarkovModel):
            v = v @ matrices.matrix(y)
        else:
            v = v @ matrices[int(y)]
    return float(v.sum())


# --------------------------------------------------------------------------
# model files

def _edge_index(key: str, states: Sequence[str], where: str) -> tuple[int, int]:
    for sep in ("->", ","):
        if sep in key:
            a, b = (part.strip() for part in key.split(sep, 1))
            break
    else:
        raise ModelValidationError(where, f"edge key {key!r} must look like 'i->j'")
    try:
        return states.index(a), states.index(b)
    except ValueError:
        raise ModelValidationError(where, f"unknown state in edge {key!r}") from None


def model_from_dict(data: dict[str, Any]) -> HiddenMarkovModel:
    """Build a model from the JSON layout documented in the README."""
    if not isinstance(data, dict):
        raise ModelValidationError("$", "model must be a JSON object")
    for key in ("states", "P", "alphabet"):
        if key not in data:
            raise ModelValidationError(key, "missing")
    states = [str(s) for s in data["states"]]
    try:
        P = np.array(data["P"], dtype=float)
    except (TypeError, ValueError):
        raise ModelValidationError("P", "must be a numeric matrix") from None
    if P.shape != (len(states), len(states)):
        raise ModelValidationError("P", f"expected {len(states)}x{len(states)}, got {P.shape}")
    chain = MarkovChain(P, tuple(states))
    if primitivity_index(chain.P) is None:
        raise NonPrimitiveChain("transition matrix in model file is not primitive")
    alphabet = data["alphabet"]
    if isinstance(alphabet, dict):
        if "gaussian" not in alphabet:
            raise ModelValidationError("alphabet", "object form must contain 'gaussian'")
        g = alphabet["gaussian"]
        if "means" not in g:
            raise ModelValidationError("alphabet.gaussian.means", "missing")
        return HiddenMarkovModel(chain, means=np.array(g["means"], dtype=float),
                                 variance=float(g.get("variance", 1.0)))
    symbols = [str(a) for a in alphabet]
    if "h" not in data:
        raise ModelValidationError("h", "missing")
    n = len(states)
    h = np.zeros((n, n, len(symbols)))
    seen = np.zeros((n, n), dtype=bool)
    for key, dist in data["h"].items():
        where = f"h[{key}]"
        i, j = _edge_index(key, states, where)
        if isinstance(dist, dict):
            row = np.zeros(len(symbols))
            for sym, p in dist.items():
                if str(sym) not in symbols:
                    raise ModelValidationError(where, f"unknown symbol {sym!r}")
                row[symbols.index(str(sym))] = float(p)
        else:
            row = np.array(dist, dtype=float)
            if row.shape != (len(symbols),):
                raise ModelValidationError(where, "distribution length differs from alphabet")
        h[i, j] = row
        seen[i, j] = True
    for i, j in zip(*np.nonzero(P > 0)):
        if not seen[i, j]:
            raise ModelValidationError(f"h[{states[i]}->{states[j]}]", "missing for a valid transition")
    return HiddenMarkovModel(chain, h=h, alphabet=tuple(symbols))


def model_to_dict(model: HiddenMarkovModel) -> dict[str, Any]:
    states = list(model.chain.states)
    out: dict[str, Any] = {"states": states, "P": model.P.tolist()}
    if model.is_gaussian:
        out["alphabet"] = {"gaussian": {"means": model.means.tolist(),
                                        "variance": model.variance}}
    else:
        out["alphabet"] = list(model.alphabet)
        out["h"] = {f"{states[i]}->{states[j]}": model.h[i, j].tolist()
                    for i, j in model.chain.edges()}
    return out


def load_model(path) -> tuple[HiddenMarkovModel, dict[str, Any]]:
    """Read a model file; returns the model and the raw JSON (for extras)."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelValidationError("$", f"invalid JSON: {exc}") from None
    return model_from_dict(data), data
