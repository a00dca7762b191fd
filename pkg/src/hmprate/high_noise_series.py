"""Closed-form entropy expansions around a high-noise point.

At a point where ``M(y) = s(y) P`` the outputs carry no information about
the state, the entropy rate equals the single-letter entropy of ``s`` and
the first two derivatives of the entropy rate reduce to sums (or Gaussian
integrals) involving ``pi^T M'(y) 1`` and ``pi^T M''(y) 1`` only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import NotFactorized
from .families import ParametrizedFamily, check_pi_constant
from .markov_core import MarkovChain

FACTOR_TOL = 1e-10
GH_ORDER = 64


@dataclass(frozen=True)
class HighNoisePoint:
    theta_star: float
    s: np.ndarray | None  # None stands for the Gaussian noise density
    P: np.ndarray
    residual: float
    variance: float | None = None

    @property
    def is_gaussian(self) -> bool:
        return self.s is None


@dataclass(frozen=True)
class SeriesExpansion:
    """Quadratic truncation ``c0 + c1 (t - t*) + c2 (t - t*)^2 / 2`` (nats)."""

    theta_star: float
    c0: float
    c1: float
    c2: float

    def predict(self, theta) -> np.ndarray | float:
        d = np.asarray(theta, dtype=float) - self.theta_star
        return self.c0 + self.c1 * d + 0.5 * self.c2 * d * d


def detect_high_noise_point(family: ParametrizedFamily,
                            theta_star: float | None = None) -> HighNoisePoint:
    """Certify ``M(y) = s(y) P`` at ``theta_star``.

    ``s`` is read off every valid edge and the largest disagreement
    ``max_y |M(y) - s(y) P|`` is the residual.  For Gaussian families the
    residual is the spread of the edge means.

    Raises
    ------
    NotFactorized
        If the residual exceeds ``FACTOR_TOL``.
    """
    t = family.theta_star if theta_star is None else theta_star
    if t is None:
        raise NotFactorized("family has no designated high-noise point")
    model = family.model_at(t)
    valid = model.P > 0
    if model.is_gaussian:
        m = model.means[valid]
        residual = float(np.ptp(m))
        if residual > FACTOR_TOL:
            raise NotFactorized(f"edge means differ by {residual:.3g}")
        return HighNoisePoint(t, None, model.P, residual, model.variance)
    Ms = model.matrices()
    per_edge = model.h[valid]
    s = per_edge.mean(axis=0)
    residual = float(np.abs(Ms - s[:, None, None] * model.P[None]).max())
    if residual > FACTOR_TOL:
        raise NotFactorized(f"factorization residual {residual:.3g} at theta={t}")
    return HighNoisePoint(t, s, model.P, residual)


def _gauss_nodes(variance: float, order: int, shift: float = 0.0):
    """Nodes and weights with ``sum w f(y) ~ int f(y) dy``.

    The weight ``exp(-x^2/2)`` is divided back out so the rule integrates
    plain functions that decay like a Gaussian centred at ``shift``.
    """
    x, w = hermegauss(order)
    sd = math.sqrt(variance)
    return shift + sd * x, sd * w * np.exp(0.5 * x * x)


def _gaussian_output_moments(family: ParametrizedFamily, theta: float, order: int):
    """``p(y), p'(y), p''(y)`` on quadrature nodes, plus the weights."""
    model = family.model_at(theta)
    pi = model.pi
    valid = model.P > 0
    centre = float(np.sum(pi[:, None] * model.P * model.means))
    spread = float(np.ptp(model.means[valid]))
    ys, ws = _gauss_nodes(model.variance + spread**2, order, centre)
    M = model.matrices_at(ys)
    d1 = family.derivative_at(theta, ys, 1)
    d2 = family.derivative_at(theta, ys, 2)
    p0 = np.einsum("i,nij->n", pi, M)
    p1 = np.einsum("i,nij->n", pi, d1)
    p2 = np.einsum("i,nij->n", pi, d2)
    return p0, p1, p2, ws


def single_letter_entropy_and_derivatives(family: ParametrizedFamily, theta: float,
                                          order: int = GH_ORDER) -> tuple[float, float, float]:
    """``H(Y_1)`` and its first two ``theta`` derivatives, in nats.

    With ``p(y) = pi^T M(y) 1``::

        H   = -sum p ln p
        H'  = -sum p' (ln p + 1)
        H'' = -sum p'' (ln p + 1) - sum p'^2 / p

    Gaussian outputs replace the sums by Gauss-Hermite quadrature.
    """
    check_pi_constant(family)
    if family.is_gaussian:
        p0, p1, p2, ws = _gaussian_output_moments(family, theta, order)
    else:
        model = family.model_at(theta)
        pi = model.pi
        p0 = np.einsum("i,yij->y", pi, model.matrices())
        p1 = np.einsum("i,yij->y", pi, family.derivative(theta, 1))
        p2 = np.einsum("i,yij->y", pi, family.derivative(theta, 2))
        ws = np.ones_like(p0)
    pos = p0 > 0
    lp = np.log(np.where(pos, p0, 1.0)) + 1.0
    H = -np.sum(ws * np.where(pos, p0 * (lp - 1.0), 0.0))
    d1 = -np.sum(ws * p1 * lp)
    d2 = -np.sum(ws * p2 * lp) - np.sum(ws * np.where(pos, p1 * p1 / np.where(pos, p0, 1.0), 0.0))
    return float(H), float(d1), float(d2)


def high_noise_derivatives(family: ParametrizedFamily,
                           order: int = GH_ORDER) -> tuple[float, float]:
    """First and second derivatives of the entropy rate at the high-noise point.

    ::

        c1 = -sum_y pi^T M'(y) 1 ln s(y)
        c2 = -sum_y pi^T M''(y) 1 ln s(y) - sum_y (pi^T M'(y) 1)^2 / s(y)
    """
    check_pi_constant(family)
    point = detect_high_noise_point(family)
    t = point.theta_star
    if point.is_gaussian:
        model = family.model_at(t)
        mu = float(model.means[model.P > 0][0])
        ys, ws = _gauss_nodes(model.variance, order, mu)
        z = ys - mu
        log_s = -0.5 * z * z / model.variance - 0.5 * math.log(2 * math.pi * model.variance)
        s = np.exp(log_s)
        pi = model.pi
        p1 = np.einsum("i,nij->n", pi, family.derivative_at(t, ys, 1))
        p2 = np.einsum("i,nij->n", pi, family.derivative_at(t, ys, 2))
        c1 = -np.sum(ws * p1 * log_s)
        c2 = -np.sum(ws * p2 * log_s) - np.sum(ws * p1 * p1 / s)
        return float(c1) + 0.0, float(c2) + 0.0
    model = family.model_at(t)
    pi = model.pi
    p1 = np.einsum("i,yij->y", pi, family.derivative(t, 1))
    p2 = np.einsum("i,yij->y", pi, family.derivative(t, 2))
    pos = point.s > 0
    log_s = np.log(np.where(pos, point.s, 1.0))
    c1 = -np.sum(p1 * log_s)
    c2 = -np.sum(p2 * log_s) - np.sum(np.where(pos, p1 * p1 / np.where(pos, point.s, 1.0), 0.0))
    return float(c1) + 0.0, float(c2) + 0.0


def gaussian_second_derivative(chain, means) -> float:
    """Edge-occupancy variance ``sum e m^2 - (sum e m)^2`` with ``e_ij = pi_i p_ij``."""
    if not isinstance(chain, MarkovChain):
        chain = MarkovChain(np.asarray(chain, dtype=float))
    e = chain.pi[:, None] * chain.P
    m = np.where(chain.P > 0, np.asarray(means, dtype=float), 0.0)
    first = float(np.sum(e * m))
    return float(np.sum(e * m * m) - first * first)


def entropy_series(family: ParametrizedFamily, order: int = GH_ORDER) -> SeriesExpansion:
    """``(c0, c1, c2)`` of the entropy rate around the high-noise point."""
    point = detect_high_noise_point(family)
    if point.is_gaussian:
        c0 = 0.5 * math.log(2 * math.pi * math.e * point.variance)
    else:
        s = point.s[point.s > 0]
        c0 = float(-np.sum(s * np.log(s)))
    c1, c2 = high_noise_derivatives(family, order)
    return SeriesExpansion(point.theta_star, c0, c1, c2)
