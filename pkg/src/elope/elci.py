"""Dual-likelihood confidence intervals for off-policy value.

The interval is ``{v : sup_{(beta,tau) in C} l_v(beta, tau) - l*_mle <= chi2/2}``
with the dual likelihood

    l_v(beta, tau) = sum_n log(1 + beta (w_n - 1) + tau (w_n r_n - v))

and ``C`` cut out by the four corners ``w in {w_min, w_max}, r in {0, 1}``.

``ci_lower`` computes the lower endpoint with one concave solve. Writing the
endpoint as ``inf E_Q[w r]`` over distributions with ``E_Q[w] = 1`` and
log-likelihood within ``chi2/2`` of the maximum, the Lagrangian dual in
``(beta, gamma, kappa)`` has the closed-form inner minimizer
``Q_n = kappa / s_n`` with ``s_n = gamma + beta w_n + w_n r_n``. Eliminating
``kappa`` at its stationary point leaves

    h(beta, gamma) = -beta - gamma + exp(-phi + (1/N) sum_n log s_n),
    phi = (l*_mle + chi2/2) / N,

concave (a geometric mean of affine maps, minus a linear term) and subject to
``gamma + beta w >= 0`` at both extreme weights. Its maximum equals the
lower endpoint. The upper endpoint follows from ``r -> 1 - r``.

``ci_bisection_reference`` is the generic construction (bisection on ``v``
with an inner maximization of ``l_v``) and serves as a cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtri
from scipy.stats import beta as beta_dist

from .data import Dataset
from .estimators import el_estimate, solve_beta_star
from .solvers import SolverError, maximize_concave_2d_constrained

CI_TOL = 1e-10
FEAS_TOL = 1e-12


class Method(str, Enum):
    EL = "EL"
    BINOMIAL = "Binomial"
    GAUSSIAN = "Gaussian"
    CR = "CR"


@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    alpha: float
    method: Method
    diagnostic: str = ""

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def __contains__(self, v: float) -> bool:
        return self.lo <= v <= self.hi


@dataclass(frozen=True)
class DualSolution:
    """Optimal dual variables of a lower-bound (or dual-likelihood) solve.

    ``objective`` is the dual value; ``phi`` the per-sample likelihood budget.
    """

    beta: float
    gamma: float
    kappa: float
    tau: float
    objective: float
    feasible: bool
    phi: float = 0.0


def chi2_quantile(alpha: float) -> float:
    """Quantile of chi-square(1) at level ``alpha``: ``ndtri((1 + alpha) / 2) ** 2``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return float(ndtri(0.5 * (1.0 + alpha)) ** 2)


def _corners(ds: Dataset):
    lo, hi = ds.range.w_min, ds.range.w_max
    return [(w, r) for w in (lo, hi) for r in (0.0, 1.0)]


def dual_likelihood(ds: Dataset, v: float, beta: float, tau: float) -> float:
    """``l_v(beta, tau)``, or ``-inf`` when ``(beta, tau)`` is infeasible."""
    for w, r in _corners(ds):
        if 1.0 + beta * (w - 1.0) + tau * (w * r - v) < -FEAS_TOL:
            return -math.inf
    t = 1.0 + beta * (ds.w - 1.0) + tau * (ds.w * ds.r - v)
    if np.any(t <= 0):
        return -math.inf
    return float(np.sum(ds.counts * np.log(t)))


def mle_dual_value(ds: Dataset) -> float:
    """``l*_mle``: the dual likelihood maximized over ``beta`` with ``tau = 0``."""
    beta = solve_beta_star(ds)
    return float(np.sum(ds.counts * np.log1p(beta * (ds.w - 1.0))))


def _lb_program(ds: Dataset, phi: float):
    w, c, u = ds.w, ds.counts, ds.w * ds.r
    n = ds.n

    def slack(z):
        return z[1] + z[0] * w + u

    def geo(s):
        return math.exp(-phi + float(np.sum(c * np.log(s))) / n)

    def f(z):
        s = slack(z)
        if np.any(s <= 0):
            return -math.inf
        return -z[0] - z[1] + geo(s)

    def grad(z):
        s = slack(z)
        G = geo(s)
        return np.array([-1.0 + G * np.sum(c * w / s) / n, -1.0 + G * np.sum(c / s) / n])

    def hess(z):
        s = slack(z)
        G = geo(s)
        m = np.array([np.sum(c * w / s), np.sum(c / s)]) / n
        s2 = c / s**2
        S = np.array([[np.sum(s2 * w * w), np.sum(s2 * w)], [np.sum(s2 * w), np.sum(s2)]]) / n
        return G * (np.outer(m, m) - S)

    def grid(beta, gamma):
        # broadcasting evaluation for grid oracles
        acc = 0.0
        ok = True
        for wi, ui, ci in zip(w, u, c):
            s = gamma + beta * wi + ui
            ok = ok & (s > 0)
            acc = acc + ci * np.log(np.where(s > 0, s, 1.0))
        lo_ok = (gamma + beta * ds.range.w_min >= 0) & (gamma + beta * ds.range.w_max >= 0)
        val = -beta - gamma + np.exp(-phi + acc / n)
        return np.where(ok & lo_ok, val, -np.inf)

    return f, grad, hess, slack, grid


def lower_bound_objective(ds: Dataset, alpha: float):
    """Concave ``h(beta, gamma)`` whose maximum is the lower endpoint.

    Returned as ``(scalar_f, broadcasting_f)``; intended for oracles and tests.
    """
    phi = (mle_dual_value(ds) + 0.5 * chi2_quantile(alpha)) / ds.n
    f, _, _, _, grid = _lb_program(ds, phi)
    return f, grid


def ci_lower(ds: Dataset, alpha: float = 0.95, tol: float = CI_TOL) -> tuple[float, DualSolution]:
    """Lower endpoint of the EL interval and the dual solution attaining it."""
    n = ds.n
    if n <= 0:
        raise ValueError("confidence interval requires at least one observation")
    phi = (mle_dual_value(ds) + 0.5 * chi2_quantile(alpha)) / n
    u = ds.w * ds.r
    if not np.any((u > 0) & (ds.counts > 0)):
        # value 0 is attained by the MLE itself; the dual objective is flat
        return 0.0, DualSolution(0.0, 0.0, 0.0, 0.0, 0.0, True, phi)
    f, grad, hess, slack, _ = _lb_program(ds, phi)
    lo, hi = ds.range.w_min, ds.range.w_max
    cons = [(-lo, -1.0, 0.0), (-hi, -1.0, 0.0)]
    rep = maximize_concave_2d_constrained(
        f, cons, init=(0.0, 1.0), tol=tol, grad=grad, hess=hess, t0=1e3, mu=1e3,
        open_domain=[(-wi, -1.0, ui) for wi, ui in zip(ds.w, u)],
    )
    z, value = _polish(f, grad, hess, rep.argmax, rep.value, (lo, hi))
    b, g = (float(x) for x in z)
    kappa = math.exp(-phi + float(np.sum(ds.counts * np.log(slack(z)))) / n) / n
    feasible = min(g + b * lo, g + b * hi) >= -FEAS_TOL and rep.tolerance_met
    return value, DualSolution(b, g, kappa, 0.0, value, feasible, phi)


def _polish(f, grad, hess, z, value, extremes, steps: int = 8):
    """Plain Newton steps from the barrier solution while they stay feasible and ascend."""
    for _ in range(steps):
        try:
            d = np.linalg.solve(-hess(z), grad(z))
        except np.linalg.LinAlgError:
            break
        cand = z + d
        if min(cand[1] + cand[0] * w for w in extremes) < 0:
            break
        cv = f(cand)
        if not cv >= value:
            break
        z, value = cand, cv
        if np.max(np.abs(d)) <= 1e-15 * max(1.0, float(np.max(np.abs(z)))):
            break
    return z, value


def ci_upper(ds: Dataset, alpha: float = 0.95, tol: float = CI_TOL) -> float:
    return 1.0 - ci_lower(ds.flipped(), alpha, tol)[0]


def ci(ds: Dataset, alpha: float = 0.95, tol: float = CI_TOL) -> ConfidenceInterval:
    """Empirical-likelihood interval at nominal coverage ``alpha``."""
    lo, sol = ci_lower(ds, alpha, tol)
    hi = ci_upper(ds, alpha, tol)
    diag = "" if sol.feasible else "lower-bound dual solve did not certify its tolerance"
    return ConfidenceInterval(lo, hi, alpha, Method.EL, diag)


def _profile_exceeds(ds: Dataset, v: float, threshold: float) -> bool:
    """True when ``sup_C l_v > threshold`` (``v`` lies outside the interval)."""
    a = ds.w - 1.0
    b = ds.w * ds.r - v
    c = ds.counts

    def f(z):
        t = 1.0 + z[0] * a + z[1] * b
        if np.any(t <= 0):
            return -math.inf
        return float(np.sum(c * np.log(t)))

    def grad(z):
        t = 1.0 + z[0] * a + z[1] * b
        return np.array([np.sum(c * a / t), np.sum(c * b / t)])

    def hess(z):
        t2 = c / (1.0 + z[0] * a + z[1] * b) ** 2
        ab = np.sum(t2 * a * b)
        return -np.array([[np.sum(t2 * a * a), ab], [ab, np.sum(t2 * b * b)]])

    cons = [(-(w - 1.0), -(w * r - v), 1.0) for w, r in _corners(ds)]
    try:
        rep = maximize_concave_2d_constrained(
            f, cons, init=(0.0, 0.0), tol=1e-9, grad=grad, hess=hess, stop_above=threshold
        )
    except SolverError:
        # unbounded dual likelihood: no distribution attains this value
        return True
    return rep.value > threshold


def ci_bisection_reference(ds: Dataset, alpha: float = 0.95, tol: float = 1e-7) -> ConfidenceInterval:
    """The same interval found by bisection on ``v`` (slow; used as an oracle)."""
    threshold = mle_dual_value(ds) + 0.5 * chi2_quantile(alpha)
    est = el_estimate(ds)

    def boundary(inside_end: float, outside_end: float) -> float:
        if not _profile_exceeds(ds, outside_end, threshold):
            return outside_end
        a, b = inside_end, outside_end
        while abs(b - a) > tol:
            mid = 0.5 * (a + b)
            if _profile_exceeds(ds, mid, threshold):
                b = mid
            else:
                a = mid
        return 0.5 * (a + b)

    return ConfidenceInterval(boundary(est.lo, 0.0), boundary(est.hi, 1.0), alpha, Method.EL)


def binomial_ci(ds: Dataset, alpha: float, rng: np.random.Generator) -> ConfidenceInterval:
    """Clopper-Pearson interval after randomly rounding rewards to {0, 1} and weights to {0, w_max}."""
    w_max = ds.range.w_max
    if not w_max > 0:
        raise ValueError("w_max must be positive")
    n = int(round(ds.n))
    p = np.clip(ds.r * ds.w / w_max, 0.0, 1.0)
    k = int(rng.binomial(ds.counts.astype(np.int64), p).sum())
    tail = 0.5 * (1.0 - alpha)
    lo = 0.0 if k == 0 else float(beta_dist.ppf(tail, k, n - k + 1))
    hi = 1.0 if k == n else float(beta_dist.ppf(1.0 - tail, k + 1, n - k))
    return ConfidenceInterval(min(1.0, lo * w_max), min(1.0, hi * w_max), alpha, Method.BINOMIAL)


def gaussian_ci(ds: Dataset, alpha: float) -> ConfidenceInterval:
    """Normal-approximation interval around the IPS mean."""
    n = ds.n
    if n < 2:
        raise ValueError("Gaussian interval needs at least two observations")
    u = ds.w * ds.r
    mean = float(np.sum(ds.counts * u) / n)
    sd = math.sqrt(max(0.0, float(np.sum(ds.counts * (u - mean) ** 2)) / (n - 1)))
    half = float(ndtri(0.5 * (1.0 + alpha))) * sd / math.sqrt(n)
    return ConfidenceInterval(
        min(1.0, max(0.0, mean - half)), min(1.0, max(0.0, mean + half)), alpha, Method.GAUSSIAN
    )
