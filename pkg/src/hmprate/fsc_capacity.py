"""Finite-state channels with Markov inputs and their high-noise capacity.

A channel has kernel ``W[s, x, s', y] = Pr(y, s' | x, s)`` (finite outputs)
or, for intersymbol-interference channels in Gaussian noise, a deterministic
next state ``next[s, x]`` and an output mean ``means[s, x]``.  A Markov input
of memory ``m`` keeps its last ``m`` symbols as a memory state; composing the
two gives a hidden Markov model on the recurrent part of ``S x X^m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import networkx as nx
import numpy as np

from .belief_recursions import EstimatorResult, entropy_rate_mc
from .errors import (
    ModelValidationError,
    NoCycle,
    NonConvergence,
    NotFactorized,
    NotHighNoise,
    NotPrimitive,
    NotStronglyConnected,
)
from .families import ParametrizedFamily
from .high_noise_series import entropy_series
from .markov_core import HiddenMarkovModel, MarkovChain, is_irreducible, primitivity_index

ROW_TOL = 1e-12
PREMISE_TOL = 1e-10
GAP_TOL = 1e-8
MAX_ITER = 500


@dataclass(frozen=True)
class FiniteStateChannel:
    """Channel law over states ``S``, inputs ``X`` and outputs ``Y``.

    Give ``W`` with shape ``(S, X, S, Y)`` for a finite output alphabet, or
    ``next_state`` and ``means`` (both ``(S, X)``) for a Gaussian one.
    """

    n_states: int
    inputs: tuple
    W: np.ndarray | None = None
    outputs: tuple = ()
    next_state: np.ndarray | None = None
    means: np.ndarray | None = None
    variance: float = 1.0

    def __post_init__(self):
        nx_ = len(self.inputs)
        if self.W is not None:
            W = np.array(self.W, dtype=float)
            if W.ndim != 4 or W.shape[:3] != (self.n_states, nx_, self.n_states):
                raise ModelValidationError("W", f"expected shape ({self.n_states}, {nx_}, "
                                                f"{self.n_states}, |Y|), got {W.shape}")
            if np.any(W < 0):
                raise ModelValidationError("W", "negative probability")
            sums = W.sum(axis=(2, 3))
            bad = np.argwhere(np.abs(sums - 1) > ROW_TOL)
            if len(bad):
                s, x = bad[0]
                raise ModelValidationError(f"W[{s}][{x}]", f"sums to {sums[s, x]:.15g}, not 1")
            object.__setattr__(self, "W", W)
            if not self.outputs:
                object.__setattr__(self, "outputs", tuple(str(y) for y in range(W.shape[3])))
        else:
            if self.next_state is None or self.means is None:
                raise ModelValidationError("W", "give W, or next_state and means")
            nxt = np.array(self.next_state, dtype=np.int64)
            means = np.array(self.means, dtype=float)
            for name, arr in (("isi_next", nxt), ("isi_means", means)):
                if arr.shape != (self.n_states, nx_):
                    raise ModelValidationError(name, f"expected shape ({self.n_states}, {nx_})")
            if np.any(nxt < 0) or np.any(nxt >= self.n_states):
                raise ModelValidationError("isi_next", "state index out of range")
            object.__setattr__(self, "next_state", nxt)
            object.__setattr__(self, "means", means)

    @property
    def is_gaussian(self) -> bool:
        return self.W is None

    def transition(self) -> np.ndarray:
        """``T[s, x, s'] = Pr(s' | x, s)``."""
        if self.is_gaussian:
            T = np.zeros((self.n_states, len(self.inputs), self.n_states))
            s, x = np.indices(self.next_state.shape)
            T[s, x, self.next_state] = 1.0
            return T
        return self.W.sum(axis=3)

    def state_deterministic(self) -> bool:
        T = self.transition()
        return bool(np.all((T == 0) | (T == 1)))


@dataclass(frozen=True)
class MarkovInput:
    """Input law ``Pr(x_t | x_{t-m}, ..., x_{t-1})``.

    ``table`` has shape ``(|X|**m, |X|)``; row ``w`` is the memory word with
    the oldest symbol most significant.
    """

    n_inputs: int
    memory: int
    table: np.ndarray
    label: str = ""

    def __post_init__(self):
        T = np.array(self.table, dtype=float)
        if T.shape != (self.n_inputs**self.memory, self.n_inputs):
            raise ModelValidationError("input_law.table", f"expected shape "
                                       f"({self.n_inputs ** self.memory}, {self.n_inputs})")
        for w, row in enumerate(T):
            if np.any(row < 0) or abs(row.sum() - 1) > ROW_TOL:
                raise ModelValidationError(f"input_law.table[{w}]", "not a distribution")
        object.__setattr__(self, "table", T)

    @property
    def n_words(self) -> int:
        return self.n_inputs**self.memory

    def shift(self, w: int, x: int) -> int:
        if self.memory == 0:
            return 0
        return (w * self.n_inputs + x) % self.n_words

    def chain(self) -> np.ndarray:
        """Transition matrix of the memory-word chain."""
        P = np.zeros((self.n_words, self.n_words))
        for w in range(self.n_words):
            for x in range(self.n_inputs):
                P[w, self.shift(w, x)] += self.table[w, x]
        return P

    def entropy_rate(self) -> float:
        """``H(X_t | X_{t-m}^{t-1})`` under the stationary word law, in nats."""
        P = self.chain()
        pi = MarkovChain(P).pi
        T = self.table
        logs = np.log(np.where(T > 0, T, 1.0))
        return float(-np.sum(pi[:, None] * T * logs))


def rll_input(p00: float) -> MarkovInput:
    """(0,1) run-length-limited binary input: a 1 is always followed by a 0."""
    return MarkovInput(2, 1, [[p00, 1 - p00], [1.0, 0.0]], label=f"p00={p00:g}")


def iid_input(probs) -> MarkovInput:
    probs = np.asarray(probs, dtype=float)
    return MarkovInput(len(probs), 0, probs[None, :])


# --------------------------------------------------------------------------
# composition

def _raw_tensor(channel: FiniteStateChannel, source: MarkovInput, kernel: np.ndarray,
                joint: bool) -> np.ndarray:
    """``M[q, q', y]`` (or ``[q, q', x * |Y| + y]``) on the full state product."""
    S, nX, nW = channel.n_states, source.n_inputs, source.n_words
    nY = kernel.shape[3]
    out = np.zeros((S * nW, S * nW, nX * nY if joint else nY))
    for s in range(S):
        for w in range(nW):
            q = s * nW + w
            for x in range(nX):
                px = source.table[w, x]
                if px == 0:
                    continue
                w2 = source.shift(w, x)
                for s2 in range(S):
                    block = px * kernel[s, x, s2]
                    q2 = s2 * nW + w2
                    if joint:
                        out[q, q2, x * nY:(x + 1) * nY] += block
                    else:
                        out[q, q2] += block
    return out


def _recurrent_class(P: np.ndarray) -> np.ndarray:
    """Indices of the unique closed communicating class of ``P``."""
    g = nx.DiGraph()
    g.add_nodes_from(range(P.shape[0]))
    g.add_edges_from(zip(*np.nonzero(P > 0)))
    cond = nx.condensation(g)
    closed = [c for c in cond.nodes if cond.out_degree(c) == 0]
    if len(closed) != 1:
        raise NotPrimitive(f"composed chain has {len(closed)} closed classes")
    return np.array(sorted(cond.nodes[closed[0]]["members"]))


@dataclass(frozen=True)
class Composition:
    output: HiddenMarkovModel
    joint: HiddenMarkovModel | None
    states: np.ndarray  # surviving indices into S x X^m
    n_words: int


def _model_from_tensor(M: np.ndarray, keep: np.ndarray, labels, alphabet) -> HiddenMarkovModel:
    M = M[np.ix_(keep, keep)]
    P = M.sum(axis=2)
    P = P / P.sum(axis=1, keepdims=True)
    h = np.where(P[..., None] > 0, M / np.where(P > 0, M.sum(axis=2), 1.0)[..., None], 0.0)
    h = h / np.where(P > 0, h.sum(axis=2), 1.0)[..., None]
    return HiddenMarkovModel(MarkovChain(P, tuple(labels)), h=h, alphabet=tuple(alphabet))


def compose(channel: FiniteStateChannel, source: MarkovInput,
            require_primitive: bool = True) -> Composition:
    """Output model (and joint input/output model) of a channel driven by a Markov input.

    Transient states of ``S x X^m`` are dropped.  For Gaussian channels each
    transition must determine the output mean; the joint model is then not
    built.

    Raises
    ------
    NotPrimitive
        If the recurrent part is not primitive (or, with
        ``require_primitive=False``, not irreducible).
    """
    if source.n_inputs != len(channel.inputs):
        raise ModelValidationError("input_law", "input alphabet size differs from channel")
    S, nW = channel.n_states, source.n_words
    labels_all = [f"{s}|{w}" for s in range(S) for w in range(nW)]
    if channel.is_gaussian:
        T = channel.transition()[..., None]
        M = _raw_tensor(channel, source, T, joint=False)[..., 0]
        keep = _recurrent_class(M)
        P = M[np.ix_(keep, keep)]
        means = np.zeros_like(P)
        seen = np.zeros(P.shape, dtype=bool)
        pos = {q: k for k, q in enumerate(keep)}
        for s in range(S):
            for w in range(nW):
                q = s * nW + w
                if q not in pos:
                    continue
                for x in range(source.n_inputs):
                    if source.table[w, x] == 0:
                        continue
                    q2 = channel.next_state[s, x] * nW + source.shift(w, x)
                    a, b = pos[q], pos[q2]
                    m = channel.means[s, x]
                    if seen[a, b] and means[a, b] != m:
                        raise ModelValidationError("isi_means", "a transition carries two different means")
                    means[a, b], seen[a, b] = m, True
        P = P / P.sum(axis=1, keepdims=True)
        output = HiddenMarkovModel(MarkovChain(P, tuple(labels_all[q] for q in keep)),
                                   means=means, variance=channel.variance)
        joint = None
    else:
        M = _raw_tensor(channel, source, channel.W, joint=False)
        keep = _recurrent_class(M.sum(axis=2))
        labels = [labels_all[q] for q in keep]
        output = _model_from_tensor(M, keep, labels, channel.outputs)
        MJ = _raw_tensor(channel, source, channel.W, joint=True)
        pairs = [f"{x},{y}" for x in channel.inputs for y in channel.outputs]
        joint = _model_from_tensor(MJ, keep, labels, pairs)
    P = output.P
    if primitivity_index(P) is None and (require_primitive or not is_irreducible(P)):
        raise NotPrimitive("composed chain is not primitive")
    return Composition(output, joint, keep, nW)


# --------------------------------------------------------------------------
# channel families

@dataclass(frozen=True)
class ChannelFamily:
    """``theta -> FiniteStateChannel`` with kernel derivatives.

    For finite outputs ``dW``/``d2W`` return arrays shaped like ``W``.  For
    Gaussian channels the means are ``theta * means`` and only the state
    graph is needed.
    """

    build: Callable[[float], FiniteStateChannel]
    domain: tuple[float, float]
    theta_star: float = 0.0
    dW: Callable | None = None
    d2W: Callable | None = None
    name: str = "channel"

    def output_family(self, source: MarkovInput, require_primitive: bool = True) -> ParametrizedFamily:
        comp = lambda t: compose(self.build(t), source, require_primitive)  # noqa: E731
        base = comp(self.theta_star)
        if base.output.is_gaussian:
            ch0 = self.build(1.0)
            unit = compose(ch0, source, require_primitive).output.means

            def build(t):
                return HiddenMarkovModel(base.output.chain, means=t * unit,
                                         variance=ch0.variance)

            return ParametrizedFamily(build, self.domain, self.theta_star,
                                      dmeans=lambda t: unit,
                                      d2means=lambda t: np.zeros_like(unit), name="output")
        keep = base.states

        def deriv(t, fn):
            raw = _raw_tensor(self.build(t), source, fn(t), joint=False)
            return np.moveaxis(raw[np.ix_(keep, keep)], 2, 0)

        return ParametrizedFamily(lambda t: comp(t).output, self.domain, self.theta_star,
                                  dM=lambda t: deriv(t, self.dW),
                                  d2M=lambda t: deriv(t, self.d2W), name="output")


def bsc_channel_family() -> ChannelFamily:
    """Memoryless BSC with crossover ``1/2 - theta``."""
    def build(theta):
        eps = 0.5 - theta
        W = np.zeros((1, 2, 1, 2))
        W[0, 0, 0] = [1 - eps, eps]
        W[0, 1, 0] = [eps, 1 - eps]
        return FiniteStateChannel(1, ("0", "1"), W=W, outputs=("0", "1"))

    d1 = np.zeros((1, 2, 1, 2))
    d1[0, 0, 0] = [1, -1]
    d1[0, 1, 0] = [-1, 1]
    return ChannelFamily(build, (-0.5, 0.5), 0.0, dW=lambda t: d1,
                         d2W=lambda t: np.zeros_like(d1), name="bsc")


def isi_channel_family(next_state, means, inputs=None, variance: float = 1.0) -> ChannelFamily:
    """Gaussian ISI channel whose output mean is ``theta * means[s, x]``."""
    means = np.asarray(means, dtype=float)
    inputs = tuple(inputs or (str(x) for x in range(means.shape[1])))

    def build(theta):
        return FiniteStateChannel(means.shape[0], inputs, next_state=next_state,
                                  means=theta * means, variance=variance)

    return ChannelFamily(build, (-2.0, 2.0), 0.0, name="isi")


def dicode_channel_family() -> ChannelFamily:
    """Memory-1 ISI with response ``1 - D`` on inputs ``+1, -1``.

    The channel state is the previous input, and the mean is ``x_t - x_{t-1}``.
    """
    levels = np.array([1.0, -1.0])
    nxt = np.array([[0, 1], [0, 1]])
    means = levels[None, :] - levels[:, None]
    return isi_channel_family(nxt, means, inputs=("+1", "-1"))


# --------------------------------------------------------------------------
# conditional entropy H(Y | X)

def _kernel_entropy_derivatives(W, dW, d2W):
    """Per ``(s, x)`` entropy of ``W(., . | x, s)`` and its two derivatives."""
    pos = W > 0
    lw = np.log(np.where(pos, W, 1.0)) + 1.0
    H = -np.sum(np.where(pos, W * (lw - 1.0), 0.0), axis=(2, 3))
    H1 = -np.sum(dW * lw, axis=(2, 3))
    H2 = -np.sum(d2W * lw, axis=(2, 3)) - np.sum(np.where(pos, dW**2 / np.where(pos, W, 1.0), 0.0),
                                                axis=(2, 3))
    return H, H1, H2


def _state_input_law(channel: FiniteStateChannel, source: MarkovInput, comp: Composition) -> np.ndarray:
    """Stationary ``Pr(S_t = s, X_t = x)`` from the composed chain."""
    pi = comp.output.pi
    law = np.zeros((channel.n_states, source.n_inputs))
    for k, q in enumerate(comp.states):
        s, w = divmod(int(q), comp.n_words)
        law[s] += pi[k] * source.table[w]
    return law


def conditional_entropy_series(family: ChannelFamily, source: MarkovInput,
                               require_primitive: bool = True) -> tuple[float, float, float]:
    """``H(Y|X)`` and its two derivatives at the high-noise point.

    Only channels whose state is a deterministic function of the previous
    state and input are supported; then ``H(Y|X)`` averages the entropy of
    each kernel row over the stationary state/input law.
    """
    t = family.theta_star
    channel = family.build(t)
    if not channel.state_deterministic():
        raise NotImplementedError("conditional entropy needs deterministic state transitions")
    if channel.is_gaussian:
        return 0.5 * math.log(2 * math.pi * math.e * channel.variance), 0.0, 0.0
    comp = compose(channel, source, require_primitive)
    law = _state_input_law(channel, source, comp)
    H, H1, H2 = _kernel_entropy_derivatives(channel.W, family.dW(t), family.d2W(t))
    return float(np.sum(law * H)), float(np.sum(law * H1)), float(np.sum(law * H2))


def conditional_entropy_rate(channel: FiniteStateChannel, source: MarkovInput,
                             require_primitive: bool = True) -> float:
    """Closed-form ``H(Y|X)`` for channels with deterministic state updates."""
    if not channel.state_deterministic():
        raise NotImplementedError("closed form needs deterministic state transitions")
    if channel.is_gaussian:
        return 0.5 * math.log(2 * math.pi * math.e * channel.variance)
    comp = compose(channel, source, require_primitive)
    law = _state_input_law(channel, source, comp)
    W = channel.W
    pos = W > 0
    H = -np.sum(np.where(pos, W * np.log(np.where(pos, W, 1.0)), 0.0), axis=(2, 3))
    return float(np.sum(law * H))


# --------------------------------------------------------------------------
# capacity expansion

def rll_bsc_capacity_coefficient(p00: float) -> float:
    """Leading coefficient of ``I(theta) ~ k theta^2`` for RLL input over a BSC (nats)."""
    if not 0 <= p00 < 1:
        raise ValueError("p00 must lie in [0, 1)")
    return 8 * (1 - p00) / (2 - p00) ** 2


def capacity_second_derivative(family: ChannelFamily, source: MarkovInput,
                               require_primitive: bool = False) -> float:
    """Second derivative of the information rate at the high-noise point.

    Computed as ``c2(H(Y)) - c2(H(Y|X))``.  The expansion is only meaningful
    when the rate and its slope both vanish there.

    Raises
    ------
    NotHighNoise
        If ``I(theta*)`` or ``I'(theta*)`` is not zero within ``PREMISE_TOL``.
    """
    try:
        out = entropy_series(family.output_family(source, require_primitive))
    except NotFactorized as exc:
        raise NotHighNoise(f"output law is informative at theta*: {exc}") from exc
    c0, c1, c2 = conditional_entropy_series(family, source, require_primitive)
    if abs(out.c0 - c0) > PREMISE_TOL or abs(out.c1 - c1) > PREMISE_TOL:
        raise NotHighNoise(f"I={out.c0 - c0:.3g}, I'={out.c1 - c1:.3g} at theta*")
    return out.c2 - c2 + 0.0


def mutual_information_rate_mc(channel: FiniteStateChannel, source: MarkovInput, n: int,
                               seed: int, burn_in: int | None = None,
                               require_primitive: bool = False) -> EstimatorResult:
    """``I = H(Y) - H(Y|X)`` with ``H(Y)`` from one simulated path.

    ``H(Y|X)`` is exact when the channel state is input-driven; otherwise
    ``H(X) + H(Y) - H(X, Y)`` is used with both entropy rates simulated
    from the same seed.
    """
    comp = compose(channel, source, require_primitive)
    hy = entropy_rate_mc(comp.output, n, seed, burn_in)
    if channel.state_deterministic():
        cond = conditional_entropy_rate(channel, source, require_primitive)
        return EstimatorResult(hy.estimate - cond, hy.std_error, n, seed, hy.burn_in)
    if comp.joint is None:
        raise NotImplementedError("Gaussian channels need deterministic state transitions")
    hxy = entropy_rate_mc(comp.joint, n, seed, burn_in)
    est = source.entropy_rate() + hy.estimate - hxy.estimate
    return EstimatorResult(est, math.hypot(hy.std_error, hxy.std_error), n, seed, hy.burn_in)


@dataclass
class CapacityRow:
    input_id: str
    c2: float
    theta_check: float
    I_mc: float
    stderr: float

    @property
    def predicted(self) -> float:
        return 0.5 * self.c2 * self.theta_check**2


@dataclass
class CapacityReport:
    rows: list[CapacityRow] = field(default_factory=list)

    @property
    def argmax(self) -> str | None:
        if not self.rows:
            return None
        return max(self.rows, key=lambda r: r.c2).input_id


def capacity_expansion_report(family: ChannelFamily, inputs: Sequence[tuple[str, MarkovInput]],
                              theta_check: float, n: int, seed: int,
                              burn_in: int | None = None) -> CapacityReport:
    """Second derivative, quadratic prediction and one Monte Carlo check per input."""
    report = CapacityReport()
    channel = family.build(theta_check)
    for input_id, source in inputs:
        c2 = capacity_second_derivative(family, source)
        if n > 0:
            mc = mutual_information_rate_mc(channel, source, n, seed, burn_in)
            I, se = mc.estimate, mc.std_error
        else:
            I, se = math.nan, math.nan
        report.rows.append(CapacityRow(input_id, c2, theta_check, I, se))
    return report


# --------------------------------------------------------------------------
# max-mean cycle and the edge-occupancy program

def _as_edges(graph) -> tuple[list, dict]:
    if isinstance(graph, nx.DiGraph):
        edges = list(graph.edges())
    else:
        edges = [tuple(e) for e in graph]
    nodes = sorted({u for e in edges for u in e}, key=str)
    return edges, {v: k for k, v in enumerate(nodes)}


def max_mean_cycle(graph, weights) -> tuple[list, float]:
    """Cycle with the largest average edge weight (Karp's recursion).

    Parameters
    ----------
    graph : networkx.DiGraph or iterable of (u, v)
    weights : mapping (u, v) -> float

    Returns
    -------
    cycle : list of edges ``[(u, v), ...]`` in traversal order
    mean : float
        The exact average weight of the returned cycle.

    Raises
    ------
    NoCycle
        If the graph is acyclic.
    """
    edges, index = _as_edges(graph)
    if not edges:
        raise NoCycle("graph has no edges")
    nodes = list(index)
    n = len(nodes)
    src = np.array([index[u] for u, _ in edges])
    dst = np.array([index[v] for _, v in edges])
    w = np.array([float(weights[e]) for e in edges])
    D = np.full((n + 1, n), -np.inf)
    pred = np.full((n + 1, n), -1, dtype=np.int64)
    D[0] = 0.0
    for k in range(1, n + 1):
        cand = D[k - 1, src] + w
        for e in np.argsort(-cand, kind="stable"):
            if cand[e] > D[k, dst[e]]:
                D[k, dst[e]] = cand[e]
                pred[k, dst[e]] = e
    if not np.isfinite(D[n]).any():
        raise NoCycle("graph is acyclic")
    with np.errstate(invalid="ignore"):
        ratios = (D[n][None, :] - D[:n]) / (n - np.arange(n))[:, None]
    ratios = np.where(np.isfinite(D[:n]), ratios, np.inf)
    score = np.where(np.isfinite(D[n]), ratios.min(axis=0), -np.inf)
    v = int(np.argmax(score))

    # walk back n steps from v and split the walk into simple cycles
    walk = []
    node = v
    for k in range(n, 0, -1):
        e = int(pred[k, node])
        walk.append(e)
        node = int(src[e])
    walk.reverse()
    best, best_mean = None, -math.inf
    stack_nodes = [node]
    stack_edges: list[int] = []
    pos = {node: 0}
    for e in walk:
        head = int(dst[e])
        stack_edges.append(e)
        if head in pos:
            cut = pos[head]
            cyc = stack_edges[cut:]
            mean = float(np.mean(w[cyc]))
            if mean > best_mean:
                best, best_mean = cyc, mean
            for nd in stack_nodes[cut + 1:]:
                del pos[nd]
            del stack_nodes[cut + 1:]
            del stack_edges[cut:]
        else:
            pos[head] = len(stack_nodes)
            stack_nodes.append(head)
    cycle = [edges[e] for e in best]
    return cycle, best_mean


@dataclass
class EdgeOptimum:
    e: dict
    value: float
    gap: float
    iterations: int
    gap_trace: list
    value_trace: list
    cycles: list


def _cycle_stats(cycle, m) -> tuple[float, float]:
    vals = np.array([m[e] for e in cycle])
    return float(np.mean(vals**2)), float(np.mean(vals))


def _best_on_hull(points: list[tuple[float, float]]):
    """Maximize ``A - B^2`` over convex combinations of ``(A, B)`` points.

    The objective has no stationary point, so the optimum lies on a segment
    between two points; every pair is tried in closed form.
    """
    best = (-math.inf, None)
    for k, (a, b) in enumerate(points):
        val = a - b * b
        if val > best[0]:
            best = (val, {k: 1.0})
    for k in range(len(points)):
        for l in range(k + 1, len(points)):
            (a1, b1), (a2, b2) = points[k], points[l]
            if b1 == b2:
                continue
            target = (a1 - a2) / (2 * (b1 - b2))
            lam = min(1.0, max(0.0, (target - b2) / (b1 - b2)))
            A = a2 + lam * (a1 - a2)
            B = b2 + lam * (b1 - b2)
            val = A - B * B
            if val > best[0]:
                best = (val, {k: lam, l: 1 - lam})
    return best


def _cycle_measure(cycles, lam) -> dict:
    e: dict = {}
    for k, weight in lam.items():
        share = weight / len(cycles[k])
        for edge in cycles[k]:
            e[edge] = e.get(edge, 0.0) + share
    return e


def isi_edge_optimizer(graph, weights, tol: float = GAP_TOL, max_iter: int = MAX_ITER) -> EdgeOptimum:
    """Maximize ``sum e m^2 - (sum e m)^2`` over edge-occupancy measures.

    The feasible set is the circulation polytope ``{e >= 0, sum e = 1,
    inflow = outflow}``, whose vertices are uniform measures on simple
    cycles.  Conditional-gradient iterations call :func:`max_mean_cycle` on
    the gradient ``m^2 - 2 B m`` and then re-optimize exactly over the
    cycles found so far, which is cheap because the objective only depends
    on ``(sum e m^2, sum e m)``.  The returned ``gap`` bounds the distance
    to the optimal value.

    Raises
    ------
    NotStronglyConnected
        If some edge lies on no cycle.
    NonConvergence
        If the gap is still above ``tol`` after ``max_iter`` iterations.
    """
    edges, _ = _as_edges(graph)
    g = nx.DiGraph(edges)
    if not nx.is_strongly_connected(g):
        raise NotStronglyConnected("edge graph must be strongly connected")
    m = {e: float(weights[e]) for e in edges}
    start, _ = max_mean_cycle(edges, {e: m[e] ** 2 for e in edges})
    cycles = [start]
    points = [_cycle_stats(start, m)]
    gaps, values = [], []
    for it in range(1, max_iter + 1):
        value, lam = _best_on_hull(points)
        e = _cycle_measure(cycles, lam)
        B = sum(e.get(k, 0.0) * m[k] for k in edges)
        grad = {k: m[k] ** 2 - 2 * B * m[k] for k in edges}
        cyc, top = max_mean_cycle(edges, grad)
        gap = max(0.0, top - sum(e.get(k, 0.0) * grad[k] for k in edges))
        gaps.append(gap)
        values.append(value)
        if gap <= tol:
            full = {k: e.get(k, 0.0) for k in edges}
            return EdgeOptimum(full, value, gap, it, gaps, values,
                               [cycles[k] for k in lam])
        key = frozenset(cyc)
        if any(frozenset(c) == key for c in cycles):
            break
        cycles.append(cyc)
        points.append(_cycle_stats(cyc, m))
    raise NonConvergence(f"gap {gaps[-1]:.3g} after {len(gaps)} iterations")


def isi_optimum_by_enumeration(graph, weights) -> tuple[float, dict]:
    """Reference optimum from all simple cycles and all pairs of them."""
    edges, _ = _as_edges(graph)
    m = {e: float(weights[e]) for e in edges}
    g = nx.DiGraph(edges)
    cycles = []
    for nodes in nx.simple_cycles(g):
        cycles.append([(nodes[k], nodes[(k + 1) % len(nodes)]) for k in range(len(nodes))])
    if not cycles:
        raise NoCycle("graph is acyclic")
    value, lam = _best_on_hull([_cycle_stats(c, m) for c in cycles])
    return value, _cycle_measure(cycles, lam)


def isi_input_from_occupancy(e: dict) -> np.ndarray:
    """Transition matrix ``p_ij = e_ij / sum_k e_ik`` on states with mass."""
    nodes = sorted({u for k in e for u in k}, key=str)
    idx = {v: k for k, v in enumerate(nodes)}
    P = np.zeros((len(nodes), len(nodes)))
    for (u, v), mass in e.items():
        P[idx[u], idx[v]] += mass
    rows = P.sum(axis=1, keepdims=True)
    return np.divide(P, rows, out=np.zeros_like(P), where=rows > 0)
