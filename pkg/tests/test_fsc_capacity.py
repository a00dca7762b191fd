import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import bsc_hmm, richardson_second
from hmprate.belief_recursions import entropy_rate_exact
from hmprate.errors import ModelValidationError, NotHighNoise, NotStronglyConnected
from hmprate.families import binary_entropy
from hmprate.fsc_capacity import (
    ChannelFamily,
    FiniteStateChannel,
    MarkovInput,
    bsc_channel_family,
    capacity_expansion_report,
    capacity_second_derivative,
    compose,
    dicode_channel_family,
    iid_input,
    isi_edge_optimizer,
    isi_input_from_occupancy,
    isi_optimum_by_enumeration,
    max_mean_cycle,
    mutual_information_rate_mc,
    rll_bsc_capacity_coefficient,
    rll_input,
)
from hmprate.high_noise_series import gaussian_second_derivative

DICODE_EDGES = [(0, 0), (0, 1), (1, 0), (1, 1)]
DICODE_M = {(0, 0): 0.0, (0, 1): -2.0, (1, 0): 2.0, (1, 1): 0.0}


def exact_information(family, source, theta, n=14):
    """H(Y) by enumeration minus the closed-form H(Y|X) for memoryless channels."""
    comp = compose(family.build(theta), source, require_primitive=False)
    return entropy_rate_exact(comp.output, n) - binary_entropy(0.5 - theta)


def test_compose_memoryless_iid():
    comp = compose(bsc_channel_family().build(0.2), iid_input([0.3, 0.7]))
    values = [entropy_rate_exact(comp.output, n) for n in (1, 3, 6)]
    assert np.allclose(values, values[0], atol=1e-12)


def test_compose_rll_matches_destination_model():
    comp = compose(bsc_channel_family().build(0.4), rll_input(0.3))
    ref = bsc_hmm(0.3, 0.0, 0.1)
    assert np.allclose(comp.output.matrices(), ref.matrices(), atol=1e-15)


def test_compose_dicode_gaussian():
    comp = compose(dicode_channel_family().build(0.7), iid_input([0.5, 0.5]))
    out = comp.output
    assert out.is_gaussian and out.n_states == 2
    assert np.allclose(out.means, [[0.0, -1.4], [1.4, 0.0]])
    assert np.allclose(out.P, 0.5)


def test_compose_prunes_transient_states():
    # memory-1 input on a channel whose state is the previous input: S x X has 4
    # states but only the diagonal ones are reachable
    comp = compose(dicode_channel_family().build(1.0),
                   MarkovInput(2, 1, [[0.2, 0.8], [0.8, 0.2]]))
    assert comp.output.n_states == 2


def test_compose_alphabet_mismatch():
    with pytest.raises(ModelValidationError):
        compose(bsc_channel_family().build(0.1), iid_input([0.2, 0.3, 0.5]))


def test_channel_row_validation():
    W = np.zeros((1, 2, 1, 2))
    W[0, 0, 0] = [0.5, 0.5]
    W[0, 1, 0] = [0.5, 0.49]
    with pytest.raises(ModelValidationError) as info:
        FiniteStateChannel(1, ("0", "1"), W=W)
    assert info.value.field == "W[0][1]"


def test_information_zero_at_uniform_noise():
    ch = bsc_channel_family().build(0.0)
    for src in (rll_input(0.25), iid_input([0.3, 0.7])):
        r = mutual_information_rate_mc(ch, src, 100_000, seed=0)
        assert abs(r.estimate) <= 3 * r.std_error + 1e-12


def test_information_noiseless_equals_input_entropy():
    src = rll_input(0.4)
    r = mutual_information_rate_mc(bsc_channel_family().build(0.5), src, 200_000, seed=1)
    assert abs(r.estimate - src.entropy_rate()) <= 3 * r.std_error + 1e-3


def test_information_noiseless_rll_entropy_closed_form():
    p = 0.4
    pi0 = 1 / (2 - p)
    assert rll_input(p).entropy_rate() == pytest.approx(pi0 * binary_entropy(p), abs=1e-15)


def test_information_rll_quadratic_prediction():
    r = mutual_information_rate_mc(bsc_channel_family().build(0.05), rll_input(0.25), 10**6, seed=2)
    predicted = rll_bsc_capacity_coefficient(0.25) * 0.05**2
    assert abs(r.estimate - predicted) <= max(3 * r.std_error, 0.15 * predicted)


@pytest.mark.parametrize("theta,p00", [(0.1, 0.3), (0.3, 0.6)])
def test_information_data_processing(theta, p00):
    src = rll_input(p00)
    r = mutual_information_rate_mc(bsc_channel_family().build(theta), src, 300_000, seed=3)
    assert r.estimate >= -3 * r.std_error
    assert r.estimate <= min(src.entropy_rate(), math.log(2)) + 3 * r.std_error


def test_rll_coefficient_values():
    assert rll_bsc_capacity_coefficient(0.0) == 2.0
    assert rll_bsc_capacity_coefficient(0.5) == pytest.approx(16 / 9, abs=1e-15)
    assert rll_bsc_capacity_coefficient(1 - 1e-9) == pytest.approx(0.0, abs=1e-7)
    grid = np.arange(10) / 10
    values = [rll_bsc_capacity_coefficient(p) for p in grid]
    assert int(np.argmax(values)) == 0


@pytest.mark.parametrize("p00", [0.0, 0.3, 0.5, 0.9])
def test_capacity_second_derivative_rll(p00):
    c2 = capacity_second_derivative(bsc_channel_family(), rll_input(p00))
    assert c2 / 2 == pytest.approx(rll_bsc_capacity_coefficient(p00), abs=1e-10)


def test_rll_coefficient_against_exact_information():
    fam = bsc_channel_family()
    fd = richardson_second(lambda t: exact_information(fam, rll_input(0.5), t), 0.0, 0.02)
    assert fd / 2 == pytest.approx(16 / 9, abs=1e-3)


def test_symmetric_markov_input_unconstrained_value():
    src = MarkovInput(2, 1, [[0.7, 0.3], [0.3, 0.7]])
    fam = bsc_channel_family()
    c2 = capacity_second_derivative(fam, src)
    fd = richardson_second(lambda t: exact_information(fam, src, t), 0.0, 0.02)
    assert c2 == pytest.approx(4.0, abs=1e-12)
    assert c2 == pytest.approx(fd, abs=1e-3)


def test_isi_second_derivative_is_mean_variance():
    fam = dicode_channel_family()
    for src in (iid_input([0.5, 0.5]), iid_input([0.2, 0.8]), MarkovInput(2, 1, [[0.2, 0.8], [0.8, 0.2]])):
        out = compose(fam.build(1.0), src, require_primitive=False).output
        assert capacity_second_derivative(fam, src) == pytest.approx(
            gaussian_second_derivative(out.chain, out.means), abs=1e-10)


def test_not_high_noise():
    base = bsc_channel_family()
    fam = ChannelFamily(base.build, base.domain, 0.1, base.dW, base.d2W)
    with pytest.raises(NotHighNoise):
        capacity_second_derivative(fam, rll_input(0.3))


def test_premise_information_zero_at_theta_star():
    ch = bsc_channel_family().build(0.0)
    for p00 in (0.0, 0.3, 0.7):
        r = mutual_information_rate_mc(ch, rll_input(p00), 50_000, seed=4)
        assert abs(r.estimate) <= 3 * r.std_error + 1e-12


def test_report_rll_grid_argmax():
    inputs = [(f"{p:.1f}", rll_input(p)) for p in np.arange(10) / 10]
    report = capacity_expansion_report(bsc_channel_family(), inputs, 0.05, 0, seed=0)
    assert report.argmax == "0.0"
    assert report.rows[0].predicted == pytest.approx(2.0 * 0.05**2, abs=1e-15)


def test_report_single_row():
    report = capacity_expansion_report(bsc_channel_family(), [("only", rll_input(0.5))], 0.05, 0, 0)
    assert len(report.rows) == 1 and report.argmax == "only"


def test_report_agrees_with_optimizer():
    best = isi_edge_optimizer(DICODE_EDGES, DICODE_M)
    P = isi_input_from_occupancy(best.e)
    inputs = [("iid", iid_input([0.5, 0.5])), ("optimizer", MarkovInput(2, 1, P))]
    report = capacity_expansion_report(dicode_channel_family(), inputs, 0.1, 0, 0)
    assert report.argmax == "optimizer"
    assert report.rows[1].c2 == pytest.approx(best.value, abs=1e-10)


def test_max_mean_cycle_examples():
    assert max_mean_cycle([(0, 0)], {(0, 0): 1.5}) == ([(0, 0)], 1.5)
    edges = [(0, 0), (0, 1), (1, 0)]
    cyc, val = max_mean_cycle(edges, {(0, 0): 3.0, (0, 1): 1.0, (1, 0): 4.0})
    assert cyc == [(0, 0)] and val == pytest.approx(3.0)
    cyc, val = max_mean_cycle(DICODE_EDGES, {e: m * m for e, m in DICODE_M.items()})
    assert sorted(cyc) == [(0, 1), (1, 0)] and val == pytest.approx(4.0)


def random_strong_graph(rng, n_nodes, n_extra):
    edges = {(k, (k + 1) % n_nodes) for k in range(n_nodes)}
    target = min(n_nodes + n_extra, n_nodes * n_nodes)
    while len(edges) < target:
        edges.add(tuple(int(v) for v in rng.integers(0, n_nodes, 2)))
    edges = sorted(edges)
    return edges, {e: float(rng.normal(scale=2.0)) for e in edges}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4))
def test_max_mean_cycle_matches_enumeration(seed, n_nodes):
    rng = np.random.default_rng(seed)
    edges, w = random_strong_graph(rng, n_nodes, min(3, n_nodes * n_nodes - n_nodes))
    best = max(np.mean([w[(c[k], c[(k + 1) % len(c)])] for k in range(len(c))])
               for c in nx.simple_cycles(nx.DiGraph(edges)))
    assert max_mean_cycle(edges, w)[1] == pytest.approx(best, abs=1e-12)


def test_optimizer_equal_weights():
    res = isi_edge_optimizer(DICODE_EDGES, {e: 1.3 for e in DICODE_EDGES})
    assert res.value == pytest.approx(0.0, abs=1e-12)


def test_optimizer_dicode():
    res = isi_edge_optimizer(DICODE_EDGES, DICODE_M)
    assert res.e[(0, 1)] == pytest.approx(0.5) and res.e[(1, 0)] == pytest.approx(0.5)
    assert res.value == pytest.approx(4.0, abs=1e-12)
    assert res.gap <= 1e-8


def test_optimizer_rejects_dangling_edge():
    with pytest.raises(NotStronglyConnected):
        isi_edge_optimizer([(0, 1), (1, 1)], {(0, 1): 1.0, (1, 1): 0.0})


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 4))
def test_optimizer_feasible_and_optimal(seed, n_nodes):
    rng = np.random.default_rng(seed)
    edges, m = random_strong_graph(rng, n_nodes, int(rng.integers(1, 9 - n_nodes)))
    res = isi_edge_optimizer(edges, m)
    e = np.array([res.e[k] for k in edges])
    assert e.min() >= -1e-15 and e.sum() == pytest.approx(1.0, abs=1e-10)
    for v in range(n_nodes):
        out = sum(res.e[k] for k in edges if k[0] == v)
        inn = sum(res.e[k] for k in edges if k[1] == v)
        assert abs(out - inn) <= 1e-10
    assert res.gap <= 1e-8
    assert res.value == pytest.approx(isi_optimum_by_enumeration(edges, m)[0], abs=1e-8)
    assert all(b >= a - 1e-12 for a, b in zip(res.value_trace, res.value_trace[1:]))

    # along any feasible direction the objective has curvature -(sum d m)^2 <= 0
    mv = np.array([m[k] for k in edges])
    cycles = [[(c[k], c[(k + 1) % len(c)]) for k in range(len(c))]
              for c in nx.simple_cycles(nx.DiGraph(edges))]
    for _ in range(100):
        a, b = rng.integers(0, len(cycles), 2)
        d = np.zeros(len(edges))
        for cyc, sign in ((cycles[a], 1), (cycles[b], -1)):
            for k in cyc:
                d[edges.index(k)] += sign / len(cyc)
        assert -(d @ mv) ** 2 <= 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_balanced_optimum_at_least_max_mean_cycle(seed):
    rng = np.random.default_rng(seed)
    edges, m = random_strong_graph(rng, 3, 3)
    first = isi_edge_optimizer(edges, m)
    # the objective is a variance, so shifting by the optimal mean keeps the
    # optimizer and gives an instance whose optimum has zero mean
    shift = sum(first.e[k] * m[k] for k in edges)
    m0 = {k: v - shift for k, v in m.items()}
    res = isi_edge_optimizer(edges, m0)
    assert abs(sum(res.e[k] * m0[k] for k in edges)) <= 1e-8
    assert res.value == pytest.approx(first.value, abs=1e-8)
    assert res.value >= max_mean_cycle(edges, {k: v * v for k, v in m0.items()})[1] - 1e-8


def test_zero_mean_instance_equals_squared_cycle():
    edges = [(0, 1), (1, 0), (0, 0), (1, 1)]
    m = {(0, 1): 1.5, (1, 0): -1.5, (0, 0): 0.5, (1, 1): -0.5}
    res = isi_edge_optimizer(edges, m)
    mmc = max_mean_cycle(edges, {k: v * v for k, v in m.items()})[1]
    assert res.value == pytest.approx(mmc, abs=1e-8)
