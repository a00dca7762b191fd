"""Model builders and brute-force oracles shared by the test modules."""
import itertools
import math

import numpy as np

from hmprate.families import bsc_markov_family
from hmprate.markov_core import HiddenMarkovModel, MarkovChain


def two_state(p00, p11):
    return np.array([[p00, 1 - p00], [1 - p11, p11]])


def bsc_hmm(p00, p11, eps):
    """Binary chain whose destination state is sent through a BSC(eps)."""
    return bsc_markov_family(two_state(p00, p11)).model_at(0.5 - eps)


def random_chain(rng, n, low=0.05):
    P = rng.uniform(low, 1.0, (n, n))
    return P / P.sum(axis=1, keepdims=True)


def random_hmm(rng, n_states, n_symbols):
    h = rng.uniform(0.05, 1.0, (n_states, n_states, n_symbols))
    h /= h.sum(axis=2, keepdims=True)
    return HiddenMarkovModel(MarkovChain(random_chain(rng, n_states)), h=h)


def brute_block_probability(model, ys):
    """Sum of pi(q0) prod p h over every state path."""
    n = len(ys)
    Q = model.n_states
    total = 0.0
    for path in itertools.product(range(Q), repeat=n + 1):
        w = model.pi[path[0]]
        for t, y in enumerate(ys):
            i, j = path[t], path[t + 1]
            w *= model.P[i, j] * model.h[i, j, y]
        total += w
    return total


def block_entropy(model, n):
    """H(Y_1..Y_n) by enumerating all output words one at a time."""
    if n == 0:
        return 0.0
    H = 0.0
    for ys in itertools.product(range(model.n_symbols), repeat=n):
        p = brute_block_probability(model, ys)
        if p > 0:
            H -= p * math.log(p)
    return H


def power_iteration_pi(P, iters=20000):
    v = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(iters):
        v = v @ P
    return v / v.sum()


def spectral_radius(M, iters=5000):
    v = np.ones(M.shape[0])
    rho = 0.0
    for _ in range(iters):
        w = M @ v
        rho = np.linalg.norm(w) / np.linalg.norm(v)
        v = w / np.linalg.norm(w)
    return float(v @ M @ v / (v @ v))


def richardson_second(f, x, h):
    """Second derivative by central differences at h and h/2, Richardson combined."""
    def d2(step):
        return (f(x + step) - 2 * f(x) + f(x - step)) / step**2
    return (4 * d2(h / 2) - d2(h)) / 3
