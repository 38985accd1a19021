"""Small deterministic concave maximizers and brute-force test oracles.

The estimators and confidence intervals only ever need one- or two-variable
concave programs. ``maximize_concave_1d`` bisects on the sign of the
derivative; ``maximize_concave_2d_constrained`` runs a log-barrier Newton
method over a handful of linear halfplanes, which certifies its own
optimality gap (``m / t`` for ``m`` constraints at barrier weight ``t``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class SolverError(RuntimeError):
    """Raised for empty/infeasible domains and unbounded objectives."""


@dataclass(frozen=True)
class Interval1D:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise SolverError(f"empty interval [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class SolveReport:
    argmax: np.ndarray
    value: float
    iterations: int
    tolerance_met: bool

    @property
    def x(self) -> float:
        """Scalar argmax for one-dimensional solves."""
        return float(self.argmax[0])


def _fd_derivative(f, lo, hi, h_min):
    # central difference; its zero is biased by O(h^2), far less than rounding noise costs
    def d(x):
        h = max(h_min, 1e-6 * max(1.0, abs(x)))
        a, b = max(lo, x - h), min(hi, x + h)
        fa, fb = f(a), f(b)
        if fa == -math.inf and fb == -math.inf:
            return math.nan
        return fb - fa

    return d


def maximize_concave_1d(
    f: Callable[[float], float],
    domain: Interval1D,
    tol: float = 1e-9,
    derivative: Optional[Callable[[float], float]] = None,
    max_iter: int = 400,
) -> SolveReport:
    """Maximize a concave function on a closed interval by bisection.

    The bracket is shrunk on the sign of ``derivative`` (a central finite
    difference of ``f`` when not supplied) until its width is at most
    ``tol``. If the derivative is exactly zero on a stretch, the midpoint
    of that flat stretch is returned.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo, hi = float(domain.lo), float(domain.hi)
    if derivative is None:
        derivative = _fd_derivative(f, lo, hi, tol / 4)
    it = 0
    while hi - lo > tol and it < max_iter:
        it += 1
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        d = derivative(mid)
        if math.isnan(d):
            raise SolverError("objective is -inf around the bisection point")
        if d > 0:
            lo = mid
        elif d < 0:
            hi = mid
        else:
            lo, hi = _flat_extent(derivative, lo, mid, hi, tol)
            break
    x = 0.5 * (lo + hi)
    val = f(x)
    if val == -math.inf:
        raise SolverError("objective evaluates to -inf on the domain")
    return SolveReport(np.array([x]), float(val), it, hi - lo <= max(tol, 2 * np.spacing(x)))


def _flat_extent(derivative, lo, mid, hi, tol):
    # d(mid) == 0: locate both ends of the zero-derivative stretch
    a, b = lo, mid
    while b - a > tol:
        m = 0.5 * (a + b)
        if derivative(m) > 0:
            a = m
        else:
            b = m
    left = b
    a, b = mid, hi
    while b - a > tol:
        m = 0.5 * (a + b)
        if derivative(m) < 0:
            b = m
        else:
            a = m
    return left, a


def _fd_grad(f, h=1e-5):
    def g(z):
        z = np.asarray(z, float)
        out = np.empty(2)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h * max(1.0, abs(z[i]))
            out[i] = (f(z + e) - f(z - e)) / (2 * e[i])
        return out

    return g


def _fd_hess(f, h=1e-4):
    def H(z):
        z = np.asarray(z, float)
        out = np.empty((2, 2))
        hs = [h * max(1.0, abs(z[i])) for i in range(2)]
        f0 = f(z)
        for i in range(2):
            for j in range(2):
                ei = np.zeros(2)
                ej = np.zeros(2)
                ei[i] = hs[i]
                ej[j] = hs[j]
                if i == j:
                    out[i, i] = (f(z + ei) - 2 * f0 + f(z - ei)) / hs[i] ** 2
                else:
                    out[i, j] = (f(z + ei + ej) - f(z + ei - ej) - f(z - ei + ej) + f(z - ei - ej)) / (
                        4 * hs[i] * hs[j]
                    )
        return 0.5 * (out + out.T)

    return H


def _phase_one(A, c):
    from scipy.optimize import linprog

    # maximize s subject to A z + s <= c, s <= 1
    m = A.shape[0]
    res = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=np.hstack([A, np.ones((m, 1))]),
        b_ub=c,
        bounds=[(None, None), (None, None), (None, 1.0)],
        method="highs",
    )
    if res.status != 0 or res.x[2] <= 0:
        raise SolverError("infeasible constraints: no strictly feasible point")
    return res.x[:2]


def maximize_concave_2d_constrained(
    f: Callable[[np.ndarray], float],
    linear_constraints: Sequence[tuple[float, float, float]],
    init: Sequence[float],
    tol: float = 1e-7,
    grad: Optional[Callable] = None,
    hess: Optional[Callable] = None,
    stop_above: Optional[float] = None,
    mu: float = 20.0,
    max_newton: int = 200,
    t0: float = 1.0,
    open_domain: Optional[Sequence[tuple[float, float, float]]] = None,
) -> SolveReport:
    """Maximize a smooth concave ``f(z)``, ``z in R^2``, over halfplanes.

    Each constraint ``(a, b, c)`` means ``a*z[0] + b*z[1] <= c``. ``f`` may
    return ``-inf`` outside its own domain; ``init`` must lie strictly inside
    both. Missing derivatives are replaced by finite differences.

    ``t0`` and ``mu`` set the barrier schedule (initial weight and growth).
    ``open_domain`` optionally lists halfplanes ``a*z[0] + b*z[1] < c`` whose
    intersection is the domain of ``f``; line searches then start inside it.
    With ``stop_above`` set, the solve returns as soon as a feasible iterate
    attains that value (a certificate that the maximum exceeds it).
    """
    A = np.array([[a, b] for a, b, _ in linear_constraints], dtype=float).reshape(-1, 2)
    c = np.array([cc for _, _, cc in linear_constraints], dtype=float)
    m = len(c)
    grad = grad or _fd_grad(f)
    hess = hess or _fd_hess(f)
    z = np.asarray(init, dtype=float).copy()
    if m and np.any(c - A @ z <= 0):
        z = _phase_one(A, c)
    if not np.isfinite(f(z)):
        raise SolverError("initial point is outside the objective's domain")

    D = np.array([[a, b] for a, b, _ in open_domain or ()], dtype=float).reshape(-1, 2)
    e = np.array([cc for _, _, cc in open_domain or ()], dtype=float)
    if m:
        D, e = np.vstack([D, A]), np.concatenate([e, c])
    t = float(t0)
    total = 0
    while True:
        z, it, hit = _center(f, grad, hess, A, c, z, t if m else math.inf, stop_above, max_newton, D, e)
        total += it
        if hit:
            return SolveReport(z, float(f(z)), total, True)
        if m == 0 or m / t <= tol:
            break
        t *= mu
    gap = m / t if m else 0.0
    return SolveReport(z, float(f(z)), total, gap <= tol)


def _max_step(D, e, z, d) -> float:
    # largest step keeping D (z + step d) < e, pulled back from the boundary
    if not len(e):
        return 1.0
    rate = D @ d
    room = e - D @ z
    pos = rate > 0
    if not np.any(pos):
        return 1.0
    return min(1.0, 0.99 * float(np.min(room[pos] / rate[pos])))


def _center(f, grad, hess, A, c, z, t, stop_above, max_newton, D, e):
    inv_t = 0.0 if math.isinf(t) else 1.0 / t

    def phi(x):
        s = c - A @ x
        if np.any(s <= 0):
            return -math.inf
        v = f(x)
        if not np.isfinite(v):
            return -math.inf
        return v + inv_t * float(np.sum(np.log(s))) if len(s) else v

    val = phi(z)
    for it in range(1, max_newton + 1):
        s = c - A @ z
        g = np.asarray(grad(z), float)
        H = np.asarray(hess(z), float)
        if len(s):
            g = g - inv_t * (A.T @ (1.0 / s))
            H = H - inv_t * (A.T * (1.0 / s**2)) @ A
        d = _ascent_direction(g, H)
        dec = float(g @ d)
        # objectives built from terms of size |z| carry rounding noise of that order
        if dec <= 1e-14 * max(1.0, abs(val), float(np.max(np.abs(z)))):
            return z, it, False
        step = _max_step(D, e, z, d)
        while True:
            cand = z + step * d
            cv = phi(cand)
            if cv >= val + 0.25 * step * dec:
                break
            step *= 0.5
            if step < 1e-12:
                # no ascent detectable above rounding noise
                return z, it, False
        z, val = cand, cv
        if stop_above is not None and f(z) >= stop_above:
            return z, it, True
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > 1e14 or val > 1e300:
            raise SolverError("unbounded objective")
    return z, max_newton, False


def _ascent_direction(g, H):
    # H is negative semidefinite for concave f; regularize if it is not
    delta = 0.0
    scale = max(1e-300, float(np.max(np.abs(H))))
    for _ in range(30):
        M = -H + delta * np.eye(2)
        try:
            L = np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            delta = max(2 * delta, 1e-12 * scale)
            continue
        return np.linalg.solve(L.T, np.linalg.solve(L, g))
    return g


def _as_vectorized(f):
    def call(x):
        try:
            out = np.asarray(f(x), dtype=float)
            if out.shape == np.shape(x):
                return out
        except (TypeError, ValueError):
            pass
        return np.array([f(float(xi)) for xi in np.ravel(x)]).reshape(np.shape(x))

    return call


def grid_oracle_1d(f, domain: Interval1D, step: float, chunk: int = 1 << 18) -> SolveReport:
    """Exhaustive evaluation on ``lo, lo+step, ...`` (the endpoint ``hi`` included).

    Exact ties resolve to the midpoint of the first and last maximizing points.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    lo, hi = float(domain.lo), float(domain.hi)
    k = int(math.floor((hi - lo) / step + 1e-9))
    fv = _as_vectorized(f)
    first = last = lo
    best_v = -math.inf
    for start in range(0, k + 1, chunk):
        idx = np.arange(start, min(k + 1, start + chunk))
        xs = lo + idx * step
        vals = fv(xs)
        top = float(np.max(vals))
        if top < best_v:
            continue
        hits = np.flatnonzero(vals == top)
        if top > best_v:
            first, best_v = float(xs[hits[0]]), top
        last = float(xs[hits[-1]])
    end_v = float(fv(np.array([hi]))[0])
    if end_v > best_v:
        first, best_v = hi, end_v
    if end_v >= best_v:
        last = hi
    return SolveReport(np.array([0.5 * (first + last)]), best_v, k + 2, True)


def grid_oracle_2d(f, box, step: float, chunk_rows: int = 64) -> SolveReport:
    """Exhaustive evaluation of ``f(x, y)`` (broadcasting) on a square grid."""
    if step <= 0:
        raise ValueError("step must be positive")
    (xlo, xhi), (ylo, yhi) = box
    xs = xlo + step * np.arange(int(math.floor((xhi - xlo) / step + 1e-9)) + 1)
    ys = ylo + step * np.arange(int(math.floor((yhi - ylo) / step + 1e-9)) + 1)
    best, best_v = (xs[0], ys[0]), -math.inf
    for i in range(0, len(xs), chunk_rows):
        X = xs[i : i + chunk_rows, None]
        vals = np.asarray(f(X, ys[None, :]), dtype=float)
        vals = np.where(np.isnan(vals), -np.inf, vals)
        j = np.unravel_index(int(np.argmax(vals)), vals.shape)
        if vals[j] > best_v:
            best_v = float(vals[j])
            best = (float(X[j[0], 0]), float(ys[j[1]]))
    return SolveReport(np.array(best), best_v, len(xs) * len(ys), True)


def primal_profile_oracle(ds, v: Optional[float], support_grid=None) -> float:
    """Maximum empirical log-likelihood subject to ``E_Q[w]=1`` and ``E_Q[wr]=v``.

    Each logged row is its own atom; extra atoms (default: the four corners
    ``{w_min, w_max} x {0, 1}``) may carry mass but add nothing to the
    likelihood. ``v=None`` drops the value constraint (the unrestricted
    maximum). Returns ``-inf`` when no distribution satisfies the moments.
    Solved as a conic program with cvxpy; intended for tiny test datasets.
    """
    import cvxpy as cp

    w, r, cnt = ds.w, ds.r, ds.counts
    if support_grid is None:
        lo, hi = ds.range.w_min, ds.range.w_max
        support_grid = [(lo, 0.0), (lo, 1.0), (hi, 0.0), (hi, 1.0)]
    ew = np.array([p[0] for p in support_grid], float)
    er = np.array([p[1] for p in support_grid], float)
    q = cp.Variable(len(w))
    e = cp.Variable(len(ew), nonneg=True)
    cons = [cnt @ q + cp.sum(e) == 1, (cnt * w) @ q + ew @ e == 1]
    if v is not None:
        cons.append((cnt * w * r) @ q + (ew * er) @ e == v)
    prob = cp.Problem(cp.Maximize(cnt @ cp.log(q)), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        prob.solve(solver=cp.SCS, eps=1e-9)
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return -math.inf
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverError(f"primal oracle failed: {prob.status}")
    return float(prob.value)
