"""Derivatives of the entropy rate.

The observation-parameter derivative is an expectation over independent
forward and backward beliefs::

    dH/dtheta = -E[ sum_y alpha^T M'(y) beta  ln(alpha^T M(y) beta) ]

with ``alpha`` drawn from the forward Blackwell measure and ``beta`` from the
backward one.  A second estimator handles perturbations of the edge
occupancies ``pi(i) p_ij`` with the observation kernels held fixed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .belief_recursions import (
    BLOCK,
    OUTPUTS,
    EstimatorResult,
    _cumulative,
    batch_means,
    default_burn_in,
    log_psi,
    sample_blackwell,
    simulate_path,
    stream,
)
from .errors import DegenerateSpectrum, InvalidPerturbation
from .families import ParametrizedFamily, check_pi_constant
from .high_noise_series import GH_ORDER, _gauss_nodes
from .markov_core import HiddenMarkovModel, MarkovChain

GAP_TOL = 1e-8
PERTURBATION_TOL = 1e-12


def lsr_derivative(M, Mprime) -> float:
    """Derivative of ``ln rho(M + t M')`` at ``t = 0``.

    Equals ``a^T M' b / (a^T M b)`` for the dominant left and right
    eigenvectors ``a`` and ``b``.

    Raises
    ------
    DegenerateSpectrum
        If the two largest eigenvalue moduli are within ``GAP_TOL`` relative.
    """
    M = np.asarray(M, dtype=float)
    Mp = np.asarray(Mprime, dtype=float)
    vals, right = np.linalg.eig(M)
    order = np.argsort(-np.abs(vals))
    lead = vals[order[0]]
    if len(vals) > 1 and abs(vals[order[1]]) >= (1 - GAP_TOL) * abs(lead):
        raise DegenerateSpectrum("dominant eigenvalue is not separated from the rest")
    lvals, left = np.linalg.eig(M.T)
    a = left[:, np.argmin(np.abs(lvals - lead))]
    b = right[:, order[0]]
    return float(np.real((a @ Mp @ b) / (a @ M @ b)))


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    """Mean and i.i.d. standard error; exactly ``(v, 0)`` for constant data."""
    values = np.asarray(values, dtype=float)
    if np.all(values == values[0]):
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def _stationary_outputs(model: HiddenMarkovModel, count: int, seed: int) -> np.ndarray:
    """``y`` drawn from the stationary output law of a Gaussian model."""
    picum = _cumulative(model.pi)
    Pcum = _cumulative(model.P)
    sd = math.sqrt(model.variance)
    out = np.empty(count)
    for b, start in enumerate(range(0, count, BLOCK)):
        size = min(BLOCK, count - start)
        rng = stream(seed, OUTPUTS, b)
        u = rng.random((size, 2))
        z = rng.standard_normal(size)
        q = (u[:, :1] >= picum[None, :]).sum(axis=1)
        nq = (u[:, 1:] >= Pcum[q]).sum(axis=1)
        out[start:start + size] = model.means[q, nq] + sd * z
    return out


def derivative_samples(family: ParametrizedFamily, theta: float, samples: int,
                       burn_in: int | None = None, seed: int = 0,
                       workers: int = 1) -> np.ndarray:
    """Per-pair terms whose mean is the entropy-rate derivative."""
    model = family.model_at(theta)
    alphas = sample_blackwell(model, burn_in, samples, seed, "forward", workers=workers)
    betas = sample_blackwell(model, burn_in, samples, seed, "backward", workers=workers)
    if model.is_gaussian:
        ys = _stationary_outputs(model, samples, seed)
        M = model.matrices_at(ys)
        D = family.derivative_at(theta, ys, 1)
        weight = np.einsum("i,nij->n", model.pi, M)
        z = np.einsum("ni,nij,nj->n", alphas, M, betas)
        zp = np.einsum("ni,nij,nj->n", alphas, D, betas)
        return -zp * np.log(z) / weight
    Ms = model.matrices()
    D = family.derivative(theta, 1)
    z = np.einsum("ni,yij,nj->ny", alphas, Ms, betas)
    zp = np.einsum("ni,yij,nj->ny", alphas, D, betas)
    terms = np.where(z > 0, zp * np.log(np.where(z > 0, z, 1.0)), 0.0)
    return -terms.sum(axis=1)


def entropy_derivative_mc(family: ParametrizedFamily, theta: float, samples: int,
                          burn_in: int | None = None, seed: int = 0,
                          workers: int = 1) -> EstimatorResult:
    """Monte Carlo estimate of ``dH/dtheta`` at ``theta``.

    Forward and backward beliefs come from independent simulated paths.
    For Gaussian outputs each pair also gets one ``y`` drawn from the
    stationary output law, and the integrand is divided by that density.

    Raises
    ------
    PiNotConstant
        If the stationary law moves with ``theta``.
    """
    check_pi_constant(family)
    model = family.model_at(theta)
    if burn_in is None:
        burn_in = default_burn_in(model)
    vals = derivative_samples(family, theta, samples, burn_in, seed, workers)
    est, se = _mean_se(vals)
    return EstimatorResult(est, se, samples, seed, burn_in)


def entropy_rate_fd(family: ParametrizedFamily, theta: float, h: float, n: int,
                    seed: int, burn_in: int | None = None) -> EstimatorResult:
    """Central difference of the Monte Carlo entropy rate with common random numbers.

    Both evaluations reuse the uniforms of one seeded path, so the paired
    per-step differences are strongly correlated and batch means of the
    difference sequence give the standard error.
    """
    lo, hi = family.model_at(theta - h), family.model_at(theta + h)
    if burn_in is None:
        burn_in = default_burn_in(family.model_at(theta))
    path_lo = simulate_path(lo, n, seed)
    path_hi = simulate_path(hi, n, seed)
    diff = (log_psi(lo, path_lo.outputs) - log_psi(hi, path_hi.outputs))[burn_in:] / (2 * h)
    est, se = batch_means(diff)
    return EstimatorResult(est, se, n, seed, burn_in)


@dataclass(frozen=True)
class IdentityResidual:
    name: str
    residual: float
    std_error: float

    @property
    def z(self) -> float:
        if self.std_error == 0:
            return 0.0 if self.residual == 0 else math.inf
        return abs(self.residual) / self.std_error

    @property
    def passed(self) -> bool:
        return self.z <= 3.0


def _vector_residual(name, samples, target) -> IdentityResidual:
    """Largest-|z| component of ``mean(samples) - target``."""
    worst = None
    for c in range(samples.shape[1]):
        m, se = _mean_se(samples[:, c])
        r = IdentityResidual(name, float(m - target[c]), se)
        if worst is None or r.z > worst.z or (r.z == worst.z and abs(r.residual) > abs(worst.residual)):
            worst = r
    return worst


def measure_property_check(model: HiddenMarkovModel, samples: int, seed: int,
                           family: ParametrizedFamily | None = None,
                           theta: float | None = None, burn_in: int | None = None,
                           fixed: int = 8, workers: int = 1) -> list[IdentityResidual]:
    """Monte Carlo residuals of the five Blackwell-measure identities.

    1. ``E[alpha] = pi``
    2. ``E[beta] = 1``
    3. ``E_alpha[sum_y alpha^T M(y) beta] = 1`` for each of ``fixed`` beta draws
    4. the same with the roles of alpha and beta exchanged
    5. ``E[sum_y alpha^T M'(y) beta] = 0`` (needs ``family`` and ``theta``)

    Vector identities report their worst component.  A factorized model
    gives residuals and standard errors of exactly zero.
    """
    alphas = sample_blackwell(model, burn_in, samples, seed, "forward", workers=workers)
    betas = sample_blackwell(model, burn_in, samples, seed, "backward", workers=workers)
    P = model.P
    out = [
        _vector_residual("forward mean equals pi", alphas, model.pi),
        _vector_residual("backward mean equals one", betas, np.ones(model.n_states)),
    ]
    aP = alphas @ P
    Pb = betas @ P.T
    worst3 = worst4 = None
    for k in range(min(fixed, samples)):
        m, se = _mean_se(aP @ betas[k])
        r3 = IdentityResidual("forward normalization per backward draw", m - 1.0, se)
        m, se = _mean_se(Pb @ alphas[k])
        r4 = IdentityResidual("backward normalization per forward draw", m - 1.0, se)
        worst3 = r3 if worst3 is None or r3.z > worst3.z else worst3
        worst4 = r4 if worst4 is None or r4.z > worst4.z else worst4
    out += [worst3, worst4]
    if family is not None:
        t = family.theta_star if theta is None else theta
        if model.is_gaussian:
            ys, ws = _gauss_nodes(model.variance + float(np.ptp(model.means)) ** 2, GH_ORDER,
                                  float(np.mean(model.means)))
            Dsum = np.einsum("n,nij->ij", ws, family.derivative_at(t, ys, 1))
        else:
            Dsum = family.derivative(t, 1).sum(axis=0)
        vals = np.einsum("ni,ij,nj->n", alphas, Dsum, betas)
        m, se = _mean_se(vals)
        out.append(IdentityResidual("derivative pairing has zero mean", m, se))
    return out


def validate_perturbation(model: HiddenMarkovModel, delta, tol: float = PERTURBATION_TOL) -> np.ndarray:
    """Check that ``delta`` is a zero-sum circulation supported on valid edges."""
    delta = np.asarray(delta, dtype=float)
    n = model.n_states
    if delta.shape != (n, n):
        raise InvalidPerturbation(f"expected a {n}x{n} array")
    if np.any(np.abs(delta[model.P == 0]) > tol):
        raise InvalidPerturbation("nonzero entry on an invalid transition")
    if abs(delta.sum()) > tol:
        raise InvalidPerturbation(f"entries sum to {delta.sum():.3g}, not 0")
    flow = delta.sum(axis=1) - delta.sum(axis=0)
    if np.abs(flow).max() > tol:
        raise InvalidPerturbation(f"flow imbalance {np.abs(flow).max():.3g}")
    return delta


def perturbed_model(model: HiddenMarkovModel, delta, t: float) -> HiddenMarkovModel:
    """Model with edge occupancies ``pi(i) p_ij + t delta_ij`` and the same kernels."""
    e = model.pi[:, None] * model.P + t * np.asarray(delta, dtype=float)
    P = e / e.sum(axis=1, keepdims=True)
    P = P / P.sum(axis=1, keepdims=True)
    return HiddenMarkovModel(MarkovChain(P, model.chain.states), h=model.h,
                             alphabet=model.alphabet)


def edge_occupancy_entropy_derivative(model: HiddenMarkovModel, delta, samples: int,
                                      seed: int, burn_in: int | None = None,
                                      workers: int = 1) -> EstimatorResult:
    """Derivative of the entropy rate along an edge-occupancy perturbation.

    The observation kernels are held fixed while ``pi(i) p_ij`` moves in
    direction ``delta``.  With ``Z = alpha^T M(y) beta`` the estimate is::

        -sum_ij delta_ij ( sum_y h_ij(y) ln M_ij(y) - T_ij )

        T_ij = E[ sum_y alpha_i M_ij(y) beta_j / (pi_i p_ij)
                        * ln(alpha_i M_ij(y) beta_j / Z)
                  - sum_y alpha_i (M(y) beta)_i / pi_i
                        * ln(alpha_i (M(y) beta)_i / Z) ]

    where ``T_ij`` is the stationary form of the generalized Blahut-Arimoto
    edge statistic, so ``-sum delta T`` is the derivative of the state
    equivocation.

    Raises
    ------
    InvalidPerturbation
        If ``delta`` is not a zero-sum circulation on the valid edges.
    """
    if model.is_gaussian:
        raise TypeError("edge-occupancy derivative needs a finite alphabet")
    delta = validate_perturbation(model, delta)
    if burn_in is None:
        burn_in = default_burn_in(model)
    if not np.any(delta):
        return EstimatorResult(0.0, 0.0, samples, seed, burn_in)
    valid = model.P > 0
    pi = model.pi
    Ms = model.matrices()
    pos = Ms > 0
    logM = np.log(np.where(pos, Ms, 1.0))
    h = np.moveaxis(model.h, 2, 0)
    fixed_term = float(np.sum(delta[None] * np.where(pos, h * logM, 0.0)))

    alphas = sample_blackwell(model, burn_in, samples, seed, "forward", workers=workers)
    betas = sample_blackwell(model, burn_in, samples, seed, "backward", workers=workers)
    edge_w = np.where(valid, delta / np.where(valid, pi[:, None] * model.P, 1.0), 0.0)
    state_w = delta.sum(axis=1) / pi

    def xlogy(x, z):
        ok = x > 0
        return np.where(ok, x * (np.log(np.where(ok, x, 1.0)) - np.log(z)), 0.0)

    vals = np.full(samples, -fixed_term)
    for y in range(Ms.shape[0]):
        joint = alphas[:, :, None] * Ms[y][None] * betas[:, None, :]  # alpha_i M_ij beta_j
        src = joint.sum(axis=2)
        Z = src.sum(axis=1)
        vals += np.einsum("ij,nij->n", edge_w, xlogy(joint, Z[:, None, None]))
        vals -= xlogy(src, Z[:, None]) @ state_w
    est, se = _mean_se(vals)
    return EstimatorResult(est, se, samples, seed, burn_in)
