"""Forward/backward belief recursions, simulation and entropy-rate estimates.

Random streams are keyed by ``(seed, tag, index)`` through ``SeedSequence``
feeding a Philox counter generator, so every path (or block of Blackwell
samples) is reproducible on its own and results do not depend on how work
is spread across workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    AlphabetTooLarge,
    DegenerateBelief,
    HMPError,
    PathTooShort,
)
from .markov_core import HiddenMarkovModel, NotApplicable, primitivity_certificate

BATCHES = 30
BLOCK = 256
DEFAULT_BURN_IN = 1000
MAX_BURN_IN = 100_000
EXACT_LIMIT = 10**7

PATH, FORWARD, BACKWARD, OUTPUTS = 0, 1, 2, 3


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *key])))


def _cumulative(probs: np.ndarray) -> np.ndarray:
    """Row-wise CDF with the last positive entry pinned above 1.

    Sampling with ``u < cum[k]`` then never lands on a zero-probability
    outcome because of rounding in the running sum.
    """
    cum = np.cumsum(probs, axis=-1)
    last = probs.shape[-1] - 1 - np.argmax((probs > 0)[..., ::-1], axis=-1)
    idx = np.arange(probs.shape[-1])
    cum = np.where(idx >= last[..., None], 2.0, cum)
    return np.ascontiguousarray(cum)


@dataclass(frozen=True)
class BeliefPair:
    alpha: np.ndarray
    beta: np.ndarray


def forward_step(alpha, My) -> tuple[np.ndarray, float]:
    """One normalized forward update; returns ``(alpha', psi)``."""
    v = np.asarray(alpha, dtype=float) @ My
    psi = float(v.sum())
    if not psi > 0:
        raise DegenerateBelief("observation has zero probability under the current belief")
    return v / psi, psi


def backward_step(beta, My, pi) -> tuple[np.ndarray, float]:
    """One backward update normalized so that ``pi^T beta' = 1``."""
    v = My @ np.asarray(beta, dtype=float)
    phi = float(np.asarray(pi) @ v)
    if not phi > 0:
        raise DegenerateBelief("observation has zero probability under the current belief")
    return v / phi, phi


@dataclass(frozen=True)
class SamplePath:
    states: np.ndarray
    outputs: np.ndarray
    seed: tuple

    def __len__(self):
        return len(self.outputs)


def simulate_path(model: HiddenMarkovModel, n: int, seed: int, stream_id: int = 0) -> SamplePath:
    """Draw ``q_1 ~ pi`` and ``n`` transitions with their outputs."""
    rng = stream(seed, PATH, stream_id)
    u0 = rng.random()
    q0 = int(np.searchsorted(np.cumsum(model.pi)[:-1], u0, side="right"))
    Pcum = _cumulative(model.P)
    if model.is_gaussian:
        u = rng.random(n)
        z = rng.standard_normal(n)
        states, ys = _kernels.simulate_gaussian(Pcum, np.ascontiguousarray(model.means),
                                                math.sqrt(model.variance), q0, u, z)
    else:
        u = rng.random((n, 2))
        states, ys = _kernels.simulate_finite(Pcum, _cumulative(model.h), q0, u)
    return SamplePath(states=states, outputs=ys, seed=(int(seed), PATH, int(stream_id)))


def log_psi(model: HiddenMarkovModel, outputs, alpha0=None) -> np.ndarray:
    """``ln psi_t`` along an output sequence, starting from ``alpha0`` (default pi)."""
    alpha0 = np.ascontiguousarray(model.pi if alpha0 is None else alpha0, dtype=float)
    if model.is_gaussian:
        return _kernels.forward_logpsi_gaussian(np.ascontiguousarray(model.P),
                                                np.ascontiguousarray(model.means),
                                                float(model.variance), alpha0,
                                                np.asarray(outputs, dtype=float))
    out = _kernels.forward_logpsi_finite(np.ascontiguousarray(model.matrices()), alpha0,
                                         np.asarray(outputs, dtype=np.int64))
    if np.isneginf(out[-1]) if len(out) else False:
        raise DegenerateBelief("path contains an impossible observation")
    return out


def belief_trace(model: HiddenMarkovModel, outputs) -> np.ndarray:
    """Rows ``(t, alpha_t(0..), beta_t(0..), psi_t)`` for a CSV dump."""
    ys = list(outputs)
    n, Q = len(ys), model.n_states
    alphas = np.empty((n, Q))
    psis = np.empty(n)
    a = model.pi.copy()
    for t, y in enumerate(ys):
        alphas[t] = a
        a, psis[t] = forward_step(a, model.matrix(y))
    betas = np.empty((n, Q))
    b = np.ones(Q)
    for t in range(n - 1, -1, -1):
        betas[t] = b
        b, _ = backward_step(b, model.matrix(ys[t]), model.pi)
    return np.column_stack([np.arange(1, n + 1), alphas, betas, psis])


@dataclass(frozen=True)
class EstimatorResult:
    estimate: float
    std_error: float
    n_samples: int
    seed: int
    burn_in: int = 0

    def interval(self, k: float = 3.0) -> tuple[float, float]:
        return self.estimate - k * self.std_error, self.estimate + k * self.std_error


def batch_means(values: np.ndarray, batches: int = BATCHES) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size and np.all(values == values[0]):
        return float(values[0]), 0.0
    means = np.array([b.mean() for b in np.array_split(values, batches)])
    return float(values.mean()), float(means.std(ddof=1) / math.sqrt(batches))


def default_burn_in(model: HiddenMarkovModel) -> int:
    """``50 k / epsilon`` from the primitivity certificate, else 1000."""
    try:
        cert = primitivity_certificate(model)
    except HMPError:
        return DEFAULT_BURN_IN
    if isinstance(cert, NotApplicable):
        return DEFAULT_BURN_IN
    return min(cert.burn_in(), MAX_BURN_IN)


def entropy_rate_mc(model: HiddenMarkovModel, n: int, seed: int, burn_in: int | None = None,
                    batches: int = BATCHES) -> EstimatorResult:
    """Entropy rate in nats as ``-mean(ln psi_t)`` over one simulated path.

    The first ``burn_in`` steps are discarded and the standard error comes
    from batch means, since consecutive ``psi_t`` are correlated.
    """
    if burn_in is None:
        burn_in = default_burn_in(model)
    if n < 10 * burn_in or n < batches:
        raise PathTooShort(f"n={n} is shorter than 10 x burn_in={burn_in}")
    path = simulate_path(model, n, seed)
    lp = log_psi(model, path.outputs)[burn_in:]
    est, se = batch_means(-lp, batches)
    return EstimatorResult(est, se, n, seed, burn_in)


def entropy_rate_exact(model: HiddenMarkovModel, n: int) -> float:
    """``H(Y_n | Y_1^{n-1})`` by enumerating all output blocks of length n."""
    if model.is_gaussian:
        raise TypeError("exact enumeration needs a finite alphabet")
    if n < 1:
        raise ValueError("n must be at least 1")
    Ms = model.matrices()
    n_sym = Ms.shape[0]
    if n_sym**n > EXACT_LIMIT:
        raise AlphabetTooLarge(f"|Y|^n = {n_sym}^{n} exceeds {EXACT_LIMIT}")
    V = model.pi[None, :]
    block_entropy = [0.0]
    for _ in range(n):
        V = np.einsum("mi,yij->myj", V, Ms).reshape(-1, Ms.shape[1])
        p = V.sum(axis=1)
        p = p[p > 0]
        block_entropy.append(float(-np.sum(p * np.log(p))))
    return block_entropy[n] - block_entropy[n - 1]


def _belief_block(model, burn_in, seed, tag, block, size):
    rng = stream(seed, tag, block)
    u0 = rng.random(size)
    pi = np.ascontiguousarray(model.pi)
    picum = _cumulative(pi)
    P = np.ascontiguousarray(model.P)
    if tag == FORWARD:
        Pcum = _cumulative(P)
    else:
        R = (P * pi[:, None] / pi[None, :]).T  # R[j, i] = Pr(Q_{t-1}=i | Q_t=j)
        Pcum = _cumulative(R / R.sum(axis=1, keepdims=True))
    if model.is_gaussian:
        u = rng.random((size, burn_in))
        z = rng.standard_normal((size, burn_in))
        means = np.ascontiguousarray(model.means)
        if tag == FORWARD:
            return _kernels.blackwell_forward_gaussian(P, Pcum, means, float(model.variance),
                                                       picum, pi, u0, u, z)
        return _kernels.blackwell_backward_gaussian(P, Pcum, means, float(model.variance),
                                                    picum, pi, u0, u, z)
    u = rng.random((size, burn_in, 2))
    Ms = np.ascontiguousarray(model.matrices())
    Hcum = _cumulative(model.h)
    kernel = (_kernels.blackwell_forward_finite if tag == FORWARD
              else _kernels.blackwell_backward_finite)
    return kernel(Ms, Pcum, Hcum, picum, pi, u0, u)


def sample_blackwell(model: HiddenMarkovModel, burn_in: int | None, count: int, seed: int,
                     direction: str = "forward", with_states: bool = False, workers: int = 1):
    """Approximate draws from the forward or backward Blackwell measure.

    Each draw runs its own path for ``burn_in`` steps, starting from
    ``alpha = pi`` (forward) or ``beta = 1`` along the reversed chain
    (backward).  With ``with_states`` the true state at the belief's time
    index is returned as well, giving Furstenberg samples.

    At a factorized model the beliefs are the exact fixed points.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    if burn_in is None:
        burn_in = default_burn_in(model)
    tag = FORWARD if direction == "forward" else BACKWARD
    sizes = [min(BLOCK, count - start) for start in range(0, count, BLOCK)]

    def run(b):
        return _belief_block(model, burn_in, seed, tag, b, sizes[b])

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(b) for b in range(len(sizes))]
    if parts:
        beliefs = np.concatenate([p[0] for p in parts])
        states = np.concatenate([p[1] for p in parts])
    else:
        beliefs = np.empty((0, model.n_states))
        states = np.empty(0, dtype=np.int64)
    if model.factorization() is not None:
        atom = model.pi if tag == FORWARD else np.ones(model.n_states)
        beliefs = np.broadcast_to(atom, beliefs.shape).copy()
    return (beliefs, states) if with_states else beliefs


def forgetting_distances(model: HiddenMarkovModel, outputs, alpha_a, alpha_b) -> np.ndarray:
    """Hilbert distance between two forward recursions fed the same outputs.

    Entry ``t`` is the distance after ``t + 1`` updates; it is ``inf`` while
    either belief still has a zero entry.
    """
    from .markov_core import hilbert_distance

    a = np.asarray(alpha_a, dtype=float)
    b = np.asarray(alpha_b, dtype=float)
    out = np.empty(len(outputs))
    for t, y in enumerate(outputs):
        M = model.matrix(y)
        a, _ = forward_step(a, M)
        b, _ = forward_step(b, M)
        out[t] = hilbert_distance(a, b) if np.all(a > 0) and np.all(b > 0) else np.inf
    return out


def forgetting_check(model: HiddenMarkovModel, certificate, paths: int = 100,
                     length: int = 400, seed: int = 0, atol: float = 1e-13) -> float:
    """Largest excess of the observed distance over ``C gamma^(n-k)``.

    Each path starts one recursion at ``pi`` and the other at a random point
    of the simplex.  A value ``<= 0`` means the bound held everywhere (up to
    ``atol`` for rounding once the beliefs have merged).
    """
    worst = -np.inf
    steps = np.arange(1, length + 1)
    bound = certificate.forgetting_bound(steps)
    mask = steps >= certificate.k
    for p in range(paths):
        path = simulate_path(model, length, seed, stream_id=p)
        start = stream(seed, PATH, paths + p).dirichlet(np.ones(model.n_states))
        d = forgetting_distances(model, path.outputs, model.pi, start)
        worst = max(worst, float(np.max(d[mask] - bound[mask] - atol)))
    return worst
