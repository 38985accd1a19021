"""Shared generators and brute-force oracles for the test suite."""
from __future__ import annotations

import numpy as np

from elope.data import Dataset, WeightRange
from elope.elci import chi2_quantile


def random_dataset(rng: np.random.Generator, n_max: int = 20, w_maxes=(2.0, 10.0, 100.0, 1000.0)) -> Dataset:
    """Mixed weight patterns: continuous, atoms at the extremes, heavy-tailed."""
    n = int(rng.integers(1, n_max + 1))
    w_max = float(rng.choice(w_maxes))
    kind = rng.integers(0, 3)
    if kind == 0:
        w = rng.uniform(0, w_max, n)
    elif kind == 1:
        w = rng.choice([0.0, 0.5, 1.0, 2.0, w_max], n)
    else:
        w = np.minimum(rng.exponential(1.0, n), w_max)
    r = rng.uniform(0, 1, n) if rng.random() < 0.5 else rng.integers(0, 2, n).astype(float)
    return Dataset(w, r, WeightRange(0.0, w_max))


def cr_estimate_oracle(ds: Dataset, w_extra: float, rho: float) -> float:
    """Minimum-norm solution of the moment equations over the augmented sample."""
    W = np.append(ds.w, w_extra)
    R = np.append(ds.r, rho)
    A = np.vstack([np.ones(len(W)), W])
    Q = np.linalg.lstsq(A, np.array([1.0, 1.0]), rcond=None)[0]
    return float(Q @ (W * R))


def cr_lower_oracle(ds: Dataset, w_extra_est: float, alpha: float) -> float:
    """Brute-force QCQP for the lower bound: min E_Q[wr] over both extra atoms."""
    import cvxpy as cp

    m = len(ds.w) + 1
    W = np.append(ds.w, w_extra_est)
    A = np.vstack([np.ones(m), W])
    Q = np.linalg.lstsq(A, np.array([1.0, 1.0]), rcond=None)[0]
    d_mle = m * m * float(Q @ Q) - m
    budget = d_mle + chi2_quantile(alpha)
    vals = []
    for w_ex in (ds.range.w_min, ds.range.w_max):
        W2 = np.append(ds.w, w_ex)
        U = np.append(ds.w * ds.r, 0.0)
        q = cp.Variable(m)
        prob = cp.Problem(
            cp.Minimize(U @ q), [cp.sum(q) == 1, W2 @ q == 1, m * m * cp.sum_squares(q) - m <= budget]
        )
        prob.solve(solver=cp.CLARABEL)
        if prob.status == "optimal":
            vals.append(prob.value)
    return max(0.0, min(vals)) if vals else float("nan")
