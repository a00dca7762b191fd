"""Acceptance criteria, one test each.

Every test prints a single ``PASS`` or ``FAIL`` line with the measured
numbers before asserting, so ``pytest -v`` output doubles as a report.
"""
import math
import time

import numpy as np
import pytest

from helpers import bsc_hmm, richardson_second, spectral_radius, two_state
from hmprate.belief_recursions import (
    entropy_rate_exact,
    entropy_rate_mc,
    forgetting_check,
    sample_blackwell,
)
from hmprate.cli import main
from hmprate.families import (
    bsc_markov_family,
    gaussian_family,
    kernel_perturbation_family,
    random_perturbation_family,
)
from hmprate.fsc_capacity import (
    bsc_channel_family,
    capacity_expansion_report,
    capacity_second_derivative,
    isi_edge_optimizer,
    isi_optimum_by_enumeration,
    max_mean_cycle,
    mutual_information_rate_mc,
    rll_input,
)
from hmprate.high_noise_series import (
    gaussian_second_derivative,
    high_noise_derivatives,
    single_letter_entropy_and_derivatives,
)
from hmprate.markov_core import (
    MarkovChain,
    birkhoff_coefficients,
    hilbert_distance,
    primitivity_certificate,
)
from hmprate.rate_derivatives import (
    entropy_derivative_mc,
    entropy_rate_fd,
    lsr_derivative,
    measure_property_check,
)


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{number:>2}] {title}: {detail}")
        assert ok, detail
    return report


def test_criterion_01_bsc_markov_coefficient(verdict):
    start = time.perf_counter()
    family = bsc_markov_family(two_state(0.9, 0.5))
    c1, c2 = high_noise_derivatives(family)
    fd = richardson_second(lambda t: entropy_rate_exact(family.model_at(t), 16), 0.0, 0.02)
    elapsed = time.perf_counter() - start
    ok = abs(c1) < 1e-12 and abs(c2 - fd) <= 1e-3 and elapsed < 30
    verdict(1, "BSC-Markov high-noise coefficient", ok,
            f"c1={c1:.3g} c2={c2:.10f} richardson={fd:.10f} (-16/9={-16 / 9:.10f}) {elapsed:.1f}s")


def test_criterion_02_symmetry_zero(verdict):
    worst = 0.0
    for p in (0.1, 0.3, 0.5, 0.7, 0.9, 0.99):
        c1, c2 = high_noise_derivatives(bsc_markov_family(two_state(p, p)))
        worst = max(worst, abs(c1), abs(c2))
    verdict(2, "symmetric chains are flat to second order", worst < 1e-12, f"max |c1|,|c2| = {worst:.3g}")


def test_criterion_03_high_noise_tightness(verdict):
    worst = 0.0
    for k in range(20):
        family = random_perturbation_family(2 + k % 2, 2 + (k // 2) % 2, np.random.default_rng(1000 + k))
        _, c2 = high_noise_derivatives(family)
        _, _, d2 = single_letter_entropy_and_derivatives(family, 0.0)
        worst = max(worst, abs(c2 - d2))
    verdict(3, "rate and single-letter second derivatives coincide", worst <= 1e-10,
            f"max |difference| over 20 families = {worst:.3g}")


def test_criterion_04_rll_bsc(verdict):
    start = time.perf_counter()
    grid = [k / 10 for k in range(10)]
    fam = bsc_channel_family()
    coef_err = max(abs(capacity_second_derivative(fam, rll_input(p)) / 2 - 8 * (1 - p) / (2 - p) ** 2)
                   for p in grid)
    report = capacity_expansion_report(fam, [(f"{p:.1f}", rll_input(p)) for p in grid], 0.05, 0, 0)
    top = max(report.rows, key=lambda r: r.c2)
    theta = 0.05  # crossover 0.45
    mc = mutual_information_rate_mc(fam.build(theta), rll_input(0.25), 10**6, seed=0)
    predicted = 8 * 0.75 / 1.75**2 * theta**2
    rel = abs(mc.estimate - predicted) / predicted
    elapsed = time.perf_counter() - start
    ok = (coef_err <= 1e-10 and report.argmax == "0.0" and abs(top.c2 / 2 - 2.0) <= 1e-10
          and rel <= 0.15 and elapsed < 60)
    verdict(4, "BSC with (0,1)-RLL input", ok,
            f"coef err={coef_err:.3g} argmax={report.argmax} value={top.c2 / 2:.12g} nats; "
            f"I_mc={mc.estimate:.6f}+-{mc.std_error:.1e} vs {predicted:.6f} ({100 * rel:.1f}%) {elapsed:.1f}s")


def test_criterion_05_gaussian_hmp(verdict):
    rng = np.random.default_rng(5)
    cases = [("dicode", np.full((2, 2), 0.5), np.array([[0.0, -2.0], [2.0, 0.0]]))]
    for k in range(2):
        P = rng.uniform(0.1, 1.0, (2 + k, 2 + k))
        cases.append((f"random{k}", P / P.sum(axis=1, keepdims=True), rng.normal(size=(2 + k, 2 + k))))
    parts, ok = [], True
    for name, P, m in cases:
        closed = gaussian_second_derivative(MarkovChain(P), m)
        family = gaussian_family(P, m)
        fd = richardson_second(lambda t: single_letter_entropy_and_derivatives(family, t)[0], 0.0, 0.02)
        ok &= abs(closed - fd) <= 1e-4
        parts.append(f"{name}: {closed:.8f} vs {fd:.8f}")
    ok &= abs(gaussian_second_derivative(MarkovChain(cases[0][1]), cases[0][2]) - 2.0) <= 1e-12
    verdict(5, "Gaussian second derivative", ok, "; ".join(parts))


def test_criterion_06_theorem_estimator(verdict):
    family = bsc_markov_family(two_state(0.9, 0.5))
    parts, ok = [], True
    for theta in (0.1, 0.15):
        fd = entropy_rate_fd(family, theta, 0.01, 10**6, seed=1)
        ses = []
        for samples in (10**4, 4 * 10**4):
            r = entropy_derivative_mc(family, theta, samples, seed=2)
            z = abs(r.estimate - fd.estimate) / math.hypot(r.std_error, fd.std_error)
            ok &= z <= 3
            ses.append(r.std_error)
            parts.append(f"theta={theta} n={samples}: {r.estimate:.5f}+-{r.std_error:.1e} z={z:.2f}")
        ratio = ses[0] / ses[1]
        ok &= 1.6 <= ratio <= 2.5
        parts.append(f"crn fd={fd.estimate:.5f}+-{fd.std_error:.1e} se ratio={ratio:.2f}")
    verdict(6, "derivative estimator vs common-random-number difference", ok, "; ".join(parts))


def test_criterion_07_measure_identities(verdict):
    family = bsc_markov_family(two_state(0.9, 0.5))
    report = measure_property_check(family.model_at(0.1), 10**5, seed=3, family=family, theta=0.1)
    zs = [r.z for r in report]
    a = np.array([[[0.125, -0.125], [0.25, -0.25]], [[-0.25, 0.25], [0.0, 0.0]]])
    fac = kernel_perturbation_family(np.array([[0.75, 0.25], [0.25, 0.75]]), [0.5, 0.5], a)
    zero = measure_property_check(fac.model_at(0.0), 4000, seed=3, family=fac, theta=0.0)
    exact_zero = all(r.residual == 0.0 and r.std_error == 0.0 for r in zero)
    ok = len(report) == 5 and all(r.passed for r in report) and exact_zero
    verdict(7, "Blackwell measure identities", ok,
            "z=" + ",".join(f"{z:.2f}" for z in zs) + f"; factorized residuals exactly zero: {exact_zero}")


def test_criterion_08_contraction(verdict):
    rng = np.random.default_rng(8)
    worst = -math.inf
    for _ in range(1000):
        M = rng.uniform(0.01, 1.0, (3, 3))
        u, v = rng.uniform(0.01, 1.0, (2, 3))
        tau = birkhoff_coefficients(M)[1]
        worst = max(worst, hilbert_distance(M.T @ u, M.T @ v) - tau * hilbert_distance(u, v))
    model = bsc_hmm(0.5, 0.0, 0.1)
    cert = primitivity_certificate(model)
    excess = forgetting_check(model, cert, paths=100, length=400, seed=8)
    ok = worst <= 1e-12 and excess <= 0
    verdict(8, "Birkhoff contraction and forgetting", ok,
            f"max Birkhoff excess={worst:.3g}; forgetting worst excess={excess:.3g} "
            f"(k={cert.k} eps={cert.epsilon:.4g} C={cert.C:.4g})")


def _random_graph(rng, n_nodes, n_edges):
    edges = {(k, (k + 1) % n_nodes) for k in range(n_nodes)}
    while len(edges) < min(n_edges, n_nodes * n_nodes):
        edges.add(tuple(int(v) for v in rng.integers(0, n_nodes, 2)))
    edges = sorted(edges)
    return edges, {e: float(rng.normal(scale=2.0)) for e in edges}


def test_criterion_09_isi_optimizer(verdict):
    rng = np.random.default_rng(9)
    worst, count = 0.0, 0
    for _ in range(300):
        n = int(rng.integers(1, 5))
        edges, m = _random_graph(rng, n, int(rng.integers(n, 9)))
        assert len(edges) <= 8
        worst = max(worst, abs(isi_edge_optimizer(edges, m).value - isi_optimum_by_enumeration(edges, m)[0]))
        count += 1
    dic_edges = [(0, 0), (0, 1), (1, 0), (1, 1)]
    dic = isi_edge_optimizer(dic_edges, {(0, 0): 0.0, (0, 1): -2.0, (1, 0): 2.0, (1, 1): 0.0})
    dic_ok = abs(dic.e[(0, 1)] - 0.5) <= 1e-12 and abs(dic.e[(1, 0)] - 0.5) <= 1e-12 and abs(dic.value - 4) <= 1e-12
    zero_worst = 0.0
    for _ in range(100):
        edges, m = _random_graph(rng, int(rng.integers(2, 5)), 8)
        first = isi_edge_optimizer(edges, m)
        shift = sum(first.e[k] * m[k] for k in edges)
        m0 = {k: v - shift for k, v in m.items()}
        res = isi_edge_optimizer(edges, m0)
        zero_worst = max(zero_worst, abs(res.value - max_mean_cycle(edges, {k: v * v for k, v in m0.items()})[1]))
    ok = worst <= 1e-8 and dic_ok and zero_worst <= 1e-8
    verdict(9, "ISI edge-occupancy optimizer", ok,
            f"max |opt - enumeration| over {count} graphs={worst:.3g}; dicode e_cross={dic.e[(0, 1)]} "
            f"value={dic.value}; zero-mean vs max-mean cycle={zero_worst:.3g}")


def test_criterion_10_lsr(verdict):
    rng = np.random.default_rng(10)
    worst = 0.0
    for n in (3, 5):
        for _ in range(100):
            M = rng.uniform(0.1, 1.0, (n, n))
            D = rng.uniform(-1.0, 1.0, (n, n))
            h = 1e-5
            fd = (math.log(spectral_radius(M + h * D)) - math.log(spectral_radius(M - h * D))) / (2 * h)
            worst = max(worst, abs(lsr_derivative(M, D) - fd))
    verdict(10, "log-spectral-radius derivative", worst <= 1e-6, f"max |error| over 200 matrices={worst:.3g}")


def test_criterion_11_determinism(verdict, capsys, tmp_path):
    from pathlib import Path

    model = str(Path(__file__).resolve().parent.parent / "models" / "bsc_markov.json")

    def csv_body(*argv):
        main(list(argv))
        return [l for l in capsys.readouterr().out.splitlines() if not l.startswith("# hmprate-table")]

    runs = [("entropy", "--model", model, "--n", "50000", "--seed", "5"),
            ("deriv", "--model", model, "--theta", "0.1", "--samples", "3000", "--seed", "5"),
            ("check", "--model", model, "--samples", "3000", "--seed", "5")]
    repeat_ok = all(csv_body(*r) == csv_body(*r) for r in runs)
    base = runs[1]
    worker_ok = all(csv_body(*base, "--workers", w) == csv_body(*base) for w in ("2", "8"))
    fam = bsc_markov_family(two_state(0.9, 0.5))
    lib_ok = (entropy_rate_mc(fam.model_at(0.2), 40_000, 6) == entropy_rate_mc(fam.model_at(0.2), 40_000, 6)
              and all(np.array_equal(sample_blackwell(fam.model_at(0.2), 300, 2000, 6, workers=1),
                                     sample_blackwell(fam.model_at(0.2), 300, 2000, 6, workers=w))
                      for w in (2, 8)))
    ok = repeat_ok and worker_ok and lib_ok
    verdict(11, "determinism and worker-count invariance", ok,
            f"repeat identical={repeat_ok} workers 1/2/8 identical={worker_ok} library={lib_ok}")
