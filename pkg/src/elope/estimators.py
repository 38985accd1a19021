"""Point estimators of a target policy's value from importance-weighted rewards.

Besides the usual IPS / SNIPS / clipped constant-1/2 DR baselines this module
implements the empirical-likelihood estimator. Its only nontrivial step is a
scalar concave program for ``beta``:

    maximize  sum_n c_n log(1 + beta (w_n - 1))
    s.t.      1 + beta (w - 1) >= 0   for w in {w_min, w_max}

whose solution reweights the sample as ``Q_n = 1 / (N (1 + beta (w_n - 1)))``.
Whatever mass ``Q`` does not place on the sample sits on the unobserved
extreme weight, paired with an arbitrary reward ``rho``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .solvers import Interval1D, maximize_concave_1d

DEFAULT_RHO = 0.5
POINT_TOL = 1e-12
_SHRINK = 1e-12
_UNBOUNDED = 1e12


class EstimationError(ArithmeticError):
    """An estimator is undefined on the given data."""


@dataclass(frozen=True)
class EstimateInterval:
    """Value set of the EL estimator: ``[lo, hi]`` over ``rho`` in ``[0, 1]``."""

    lo: float
    hi: float
    beta_star: float
    is_point: bool
    value: float
    rho: float


def _nonempty(ds: Dataset) -> float:
    n = ds.n
    if n <= 0:
        raise EstimationError("estimator requires at least one observation")
    return n


def ips(ds: Dataset) -> float:
    n = _nonempty(ds)
    return float(np.sum(ds.counts * ds.w * ds.r) / n)


def snips(ds: Dataset) -> float:
    total = float(np.sum(ds.counts * ds.w))
    if not total > 0:
        raise EstimationError("SNIPS undefined: sum of importance weights is zero")
    return float(np.sum(ds.counts * ds.w * ds.r) / total)


def clipped_dr_const_half(ds: Dataset) -> float:
    """Doubly robust estimate with the constant reward predictor 1/2, clipped to [0, 1]."""
    n = _nonempty(ds)
    raw = 0.5 + float(np.sum(ds.counts * ds.w * (ds.r - 0.5))) / n
    return min(1.0, max(0.0, raw))


def beta_bounds(ds: Dataset) -> tuple[float, float]:
    """Feasible interval for beta implied by the weight range."""
    lo = -1.0 / (ds.range.w_max - 1.0) if ds.range.w_max > 1 else -_UNBOUNDED
    hi = 1.0 / (1.0 - ds.range.w_min) if ds.range.w_min < 1 else _UNBOUNDED
    return lo, hi


def _beta_derivative(ds: Dataset):
    a = ds.w - 1.0
    c = ds.counts

    def g(beta: float) -> float:
        d = 1.0 + beta * a
        if np.any(d <= 0):
            return -math.inf if beta > 0 else math.inf
        return float(np.sum(c * a / d))

    return g


def beta_objective(ds: Dataset):
    """Vectorized ``beta -> sum_n c_n log(1 + beta (w_n - 1))`` (``-inf`` off-domain)."""
    a = ds.w - 1.0
    c = ds.counts

    def f(beta):
        b = np.asarray(beta, dtype=float)
        acc = np.zeros_like(b)
        for ai, ci in zip(a, c):
            if ai == 0:
                continue
            t = 1.0 + b * ai
            with np.errstate(divide="ignore", invalid="ignore"):
                acc += ci * np.log(np.where(t > 0, t, 0.0))
        return acc if acc.ndim else float(acc)

    return f


def _solve_beta(ds: Dataset) -> tuple[float, bool]:
    """Return ``(beta*, interior)``; ``interior`` is False when a bound is active."""
    _nonempty(ds)
    if np.all(ds.w == 1.0):
        return 0.0, True
    g = _beta_derivative(ds)
    g0 = g(0.0)
    if g0 == 0.0:
        return 0.0, True
    lo, hi = beta_bounds(ds)
    if g0 > 0:
        edge = hi * (1.0 - _SHRINK)
        if g(edge) >= 0:
            return hi, False
        a, b = 0.0, edge
    else:
        edge = lo * (1.0 - _SHRINK)
        if g(edge) <= 0:
            return lo, False
        a, b = edge, 0.0
    tol = 4 * np.finfo(float).eps * max(1.0, abs(a), abs(b))
    rep = maximize_concave_1d(beta_objective(ds), Interval1D(a, b), tol=tol, derivative=g)
    return rep.x, True


def solve_beta_star(ds: Dataset) -> float:
    """Maximizer of the profile dual with the value constraint dropped."""
    return _solve_beta(ds)[0]


def mle_weights(ds: Dataset, beta: float) -> np.ndarray:
    """Per-atom probability mass ``c_n / (N (1 + beta (w_n - 1)))``."""
    return ds.counts / (ds.n * (1.0 + beta * (ds.w - 1.0)))


def el_estimate(ds: Dataset, rho: float = DEFAULT_RHO) -> EstimateInterval:
    """Empirical-likelihood value estimate at ``rho`` and its full ``rho``-interval."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    beta, interior = _solve_beta(ds)
    q = mle_weights(ds, beta)
    on_sample = float(np.sum(q * ds.w * ds.r))
    w_mass = float(np.sum(q * ds.w))
    if interior:
        # stationarity gives sum(q w) == 1 exactly; normalize away rounding
        lo = hi = on_sample / w_mass
    else:
        lo = on_sample / max(w_mass, 1.0)
        hi = lo + max(0.0, 1.0 - w_mass)
    is_point = interior or hi - lo <= POINT_TOL
    if is_point:
        hi = lo
    return EstimateInterval(lo, hi, beta, is_point, lo + rho * (hi - lo), rho)


def emp_estimate(ds: Dataset) -> float:
    """Self-normalized estimate under the likelihood-maximizing reweighting."""
    q = mle_weights(ds, solve_beta_star(ds))
    mass = float(np.sum(q))
    assert mass > 0, "MLE places no mass on the sample"
    return float(np.sum(q * ds.w * ds.r)) / mass


def el_value_difference(ds: Dataset, rho: float = DEFAULT_RHO) -> float:
    """Estimate of ``V(pi) - V(h)`` under the likelihood-maximizing reweighting."""
    beta = solve_beta_star(ds)
    d = 1.0 + beta * (ds.w - 1.0)
    return float(np.sum(ds.counts * (ds.w - 1.0) * (ds.r - rho) / d) / ds.n)


def bias_bound(n: int, w_max: float) -> float:
    """Worst-case bias bound for :func:`el_value_difference`."""
    if n < 1 or w_max < 1:
        raise ValueError("need n >= 1 and w_max >= 1")
    return 10.0 * math.sqrt(w_max / n) + 16.0 * w_max / n
