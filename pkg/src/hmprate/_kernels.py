"""Compiled inner loops for path simulation and belief recursions.

All randomness is passed in as pre-drawn arrays so that the caller controls
the stream layout (and hence reproducibility and common random numbers).
"""
import math

import numba as nb
import numpy as np

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@nb.njit(cache=True, nogil=True)
def _search(cum, u):
    n = cum.shape[0]
    for k in range(n - 1):
        if u < cum[k]:
            return k
    return n - 1


@nb.njit(cache=True, nogil=True)
def simulate_finite(Pcum, Hcum, q0, u):
    n = u.shape[0]
    states = np.empty(n + 1, np.int64)
    ys = np.empty(n, np.int64)
    q = q0
    states[0] = q
    for t in range(n):
        nq = _search(Pcum[q], u[t, 0])
        ys[t] = _search(Hcum[q, nq], u[t, 1])
        q = nq
        states[t + 1] = q
    return states, ys


@nb.njit(cache=True, nogil=True)
def simulate_gaussian(Pcum, means, sd, q0, u, z):
    n = u.shape[0]
    states = np.empty(n + 1, np.int64)
    ys = np.empty(n)
    q = q0
    states[0] = q
    for t in range(n):
        nq = _search(Pcum[q], u[t])
        ys[t] = means[q, nq] + sd * z[t]
        q = nq
        states[t + 1] = q
    return states, ys


@nb.njit(cache=True, nogil=True)
def forward_logpsi_finite(Ms, alpha0, ys):
    Q = alpha0.shape[0]
    n = ys.shape[0]
    out = np.empty(n)
    a = alpha0.copy()
    nxt = np.empty(Q)
    for t in range(n):
        M = Ms[ys[t]]
        s = 0.0
        for j in range(Q):
            acc = 0.0
            for i in range(Q):
                acc += a[i] * M[i, j]
            nxt[j] = acc
            s += acc
        if not s > 0.0:
            out[t] = -np.inf
            return out
        for j in range(Q):
            a[j] = nxt[j] / s
        out[t] = math.log(s)
    return out


@nb.njit(cache=True, nogil=True)
def _gauss_step(a, P, means, var, y, nxt, logw):
    # returns ln(alpha^T M(y) 1) and writes the normalized update into nxt
    Q = a.shape[0]
    top = -np.inf
    for i in range(Q):
        for j in range(Q):
            if P[i, j] > 0.0:
                d = y - means[i, j]
                lw = -0.5 * d * d / var
                logw[i, j] = lw
                if lw > top:
                    top = lw
    s = 0.0
    for j in range(Q):
        acc = 0.0
        for i in range(Q):
            if P[i, j] > 0.0:
                acc += a[i] * P[i, j] * math.exp(logw[i, j] - top)
        nxt[j] = acc
        s += acc
    for j in range(Q):
        nxt[j] /= s
    return math.log(s) + top - _LOG_SQRT_2PI - 0.5 * math.log(var)


@nb.njit(cache=True, nogil=True)
def forward_logpsi_gaussian(P, means, var, alpha0, ys):
    Q = alpha0.shape[0]
    n = ys.shape[0]
    out = np.empty(n)
    a = alpha0.copy()
    nxt = np.empty(Q)
    logw = np.empty((Q, Q))
    for t in range(n):
        out[t] = _gauss_step(a, P, means, var, ys[t], nxt, logw)
        for j in range(Q):
            a[j] = nxt[j]
    return out


@nb.njit(cache=True, nogil=True)
def blackwell_forward_finite(Ms, Pcum, Hcum, picum, pi, u0, u):
    """Forward beliefs after ``u.shape[1]`` steps for each of ``u.shape[0]`` paths."""
    N, L = u.shape[0], u.shape[1]
    Q = pi.shape[0]
    alphas = np.empty((N, Q))
    states = np.empty(N, np.int64)
    a = np.empty(Q)
    nxt = np.empty(Q)
    for r in range(N):
        q = _search(picum, u0[r])
        for i in range(Q):
            a[i] = pi[i]
        for t in range(L):
            nq = _search(Pcum[q], u[r, t, 0])
            y = _search(Hcum[q, nq], u[r, t, 1])
            q = nq
            M = Ms[y]
            s = 0.0
            for j in range(Q):
                acc = 0.0
                for i in range(Q):
                    acc += a[i] * M[i, j]
                nxt[j] = acc
                s += acc
            for j in range(Q):
                a[j] = nxt[j] / s
        for i in range(Q):
            alphas[r, i] = a[i]
        states[r] = q
    return alphas, states


@nb.njit(cache=True, nogil=True)
def blackwell_backward_finite(Ms, Rcum, Hcum, picum, pi, u0, u):
    """Backward beliefs driven by the time-reversed chain."""
    N, L = u.shape[0], u.shape[1]
    Q = pi.shape[0]
    betas = np.empty((N, Q))
    states = np.empty(N, np.int64)
    b = np.empty(Q)
    nxt = np.empty(Q)
    for r in range(N):
        q = _search(picum, u0[r])
        for i in range(Q):
            b[i] = 1.0
        for t in range(L):
            pq = _search(Rcum[q], u[r, t, 0])
            y = _search(Hcum[pq, q], u[r, t, 1])
            q = pq
            M = Ms[y]
            s = 0.0
            for i in range(Q):
                acc = 0.0
                for j in range(Q):
                    acc += M[i, j] * b[j]
                nxt[i] = acc
                s += pi[i] * acc
            for i in range(Q):
                b[i] = nxt[i] / s
        for i in range(Q):
            betas[r, i] = b[i]
        states[r] = q
    return betas, states


@nb.njit(cache=True, nogil=True)
def blackwell_forward_gaussian(P, Pcum, means, var, picum, pi, u0, u, z):
    N, L = u.shape[0], u.shape[1]
    Q = pi.shape[0]
    sd = math.sqrt(var)
    alphas = np.empty((N, Q))
    states = np.empty(N, np.int64)
    a = np.empty(Q)
    nxt = np.empty(Q)
    logw = np.empty((Q, Q))
    for r in range(N):
        q = _search(picum, u0[r])
        for i in range(Q):
            a[i] = pi[i]
        for t in range(L):
            nq = _search(Pcum[q], u[r, t])
            y = means[q, nq] + sd * z[r, t]
            q = nq
            _gauss_step(a, P, means, var, y, nxt, logw)
            for j in range(Q):
                a[j] = nxt[j]
        for i in range(Q):
            alphas[r, i] = a[i]
        states[r] = q
    return alphas, states


@nb.njit(cache=True, nogil=True)
def blackwell_backward_gaussian(P, Rcum, means, var, picum, pi, u0, u, z):
    N, L = u.shape[0], u.shape[1]
    Q = pi.shape[0]
    sd = math.sqrt(var)
    betas = np.empty((N, Q))
    states = np.empty(N, np.int64)
    b = np.empty(Q)
    nxt = np.empty(Q)
    logw = np.empty((Q, Q))
    for r in range(N):
        q = _search(picum, u0[r])
        for i in range(Q):
            b[i] = 1.0
        for t in range(L):
            pq = _search(Rcum[q], u[r, t])
            y = means[pq, q] + sd * z[r, t]
            q = pq
            top = -np.inf
            for i in range(Q):
                for j in range(Q):
                    if P[i, j] > 0.0:
                        d = y - means[i, j]
                        logw[i, j] = -0.5 * d * d / var
                        if logw[i, j] > top:
                            top = logw[i, j]
            s = 0.0
            for i in range(Q):
                acc = 0.0
                for j in range(Q):
                    if P[i, j] > 0.0:
                        acc += P[i, j] * math.exp(logw[i, j] - top) * b[j]
                nxt[i] = acc
                s += pi[i] * acc
            for i in range(Q):
                b[i] = nxt[i] / s
        for i in range(Q):
            betas[r, i] = b[i]
        states[r] = q
    return betas, states
