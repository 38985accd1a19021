"""Closed-form estimator and lower bound under the lambda=-2 Cressie-Read divergence.

Both reduce to least-squares problems over the sample augmented by a single
extra atom, so they depend on the data only through six running sums and
can be maintained online (:func:`update`) or sharded and merged
(:func:`merge`).

Conventions, with ``M = N + 1`` atoms and ``Q_j = (1 + d_j) / M``:

* divergence ``D(Q) = sum_j ((M Q_j)^2 - 1) = M * mean(d^2)``, calibrated
  against chi-square(1) like ``-2 log`` likelihood ratios;
* estimator: minimize ``D`` subject to ``sum Q = 1`` and ``E_Q[w] = 1``; the
  extra atom is ``(w_min, rho)`` when the sample mean weight is at least 1,
  ``(w_max, rho)`` otherwise;
* lower bound: minimize ``E_Q[w r]`` subject to the same moments and
  ``D(Q) <= D_mle + chi2``, for extra atoms ``(w_min, 0)`` and ``(w_max, 0)``,
  reporting the smaller value.

With ``u = w r`` and all moments taken over the augmented atoms, the bound is
``x - sqrt(2 y z)`` where ``x = mean(u) + (1 - mean(w)) cov(w, u) / var(w)``,
``y = var(u) - cov(w, u)^2 / var(w)`` and
``z = (D_mle + chi2) / (2 M) - (1 - mean(w))^2 / (2 var(w))``.
A negative ``z`` means that extra atom cannot meet the divergence budget.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass

from .data import Dataset, LoggedDatum, WeightRange
from .elci import chi2_quantile

log = logging.getLogger(__name__)

_FMT = "<6d"


class CRDisplayError(ArithmeticError):
    """The closed form does not apply (degenerate weights or empty budget)."""


@dataclass(frozen=True)
class SuffStats:
    n: float = 0.0
    sum_w: float = 0.0
    sum_w2: float = 0.0
    sum_wr: float = 0.0
    sum_w2r: float = 0.0
    sum_w2r2: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "SuffStats":
        return cls(**json.loads(text))

    def to_bytes(self) -> bytes:
        return struct.pack(_FMT, *asdict(self).values())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SuffStats":
        return cls(*struct.unpack(_FMT, raw))

    def flipped(self) -> "SuffStats":
        """Statistics of the same log with rewards ``r -> 1 - r``."""
        return SuffStats(
            self.n,
            self.sum_w,
            self.sum_w2,
            self.sum_w - self.sum_wr,
            self.sum_w2 - self.sum_w2r,
            self.sum_w2 - 2 * self.sum_w2r + self.sum_w2r2,
        )


def update(stats: SuffStats, d: LoggedDatum) -> SuffStats:
    w, r = d.w, d.r
    return SuffStats(
        stats.n + 1,
        stats.sum_w + w,
        stats.sum_w2 + w * w,
        stats.sum_wr + w * r,
        stats.sum_w2r + w * w * r,
        stats.sum_w2r2 + w * w * r * r,
    )


def merge(a: SuffStats, b: SuffStats) -> SuffStats:
    return SuffStats(*(x + y for x, y in zip(asdict(a).values(), asdict(b).values())))


def from_dataset(ds: Dataset) -> SuffStats:
    """Batch sums (``counts`` act as multiplicities)."""
    c, w, r = ds.counts, ds.w, ds.r
    return SuffStats(
        float(c.sum()),
        float((c * w).sum()),
        float((c * w * w).sum()),
        float((c * w * r).sum()),
        float((c * w * w * r).sum()),
        float((c * w * w * r * r).sum()),
    )


@dataclass(frozen=True)
class _Moments:
    m: float
    w: float
    w2: float
    u: float
    wu: float
    u2: float

    @property
    def var_w(self) -> float:
        return self.w2 - self.w * self.w


def _augmented(stats: SuffStats, w_a: float, r_a: float) -> _Moments:
    m = stats.n + 1.0
    u_a = w_a * r_a
    return _Moments(
        m,
        (stats.sum_w + w_a) / m,
        (stats.sum_w2 + w_a * w_a) / m,
        (stats.sum_wr + u_a) / m,
        (stats.sum_w2r + w_a * u_a) / m,
        (stats.sum_w2r2 + u_a * u_a) / m,
    )


def undata_weight(stats: SuffStats, range: WeightRange) -> float:
    """Extra-atom weight used by the estimator."""
    return range.w_min if stats.sum_w / stats.n >= 1.0 else range.w_max


def _require(stats: SuffStats):
    if stats.n < 1:
        raise CRDisplayError("need at least one observation")


def _mle_divergence(stats: SuffStats, range: WeightRange) -> float:
    mo = _augmented(stats, undata_weight(stats, range), 0.0)
    if mo.var_w <= 0:
        raise CRDisplayError("all augmented weights are equal")
    return mo.m * (1.0 - mo.w) ** 2 / mo.var_w


def cr_estimate(stats: SuffStats, range: WeightRange, rho: float = 0.5) -> float:
    """Closed-form value estimate; raises :class:`CRDisplayError` when degenerate."""
    _require(stats)
    mo = _augmented(stats, undata_weight(stats, range), rho)
    a = mo.w - 1.0
    b = mo.w2 - 2.0 * mo.w + 1.0
    det = b - a * a
    if det <= 0:
        raise CRDisplayError("all augmented weights are equal")
    gamma, beta = b / det, -a / det
    s = (gamma - beta) * (stats.sum_wr - rho * stats.sum_w) + beta * (stats.sum_w2r - rho * stats.sum_w2)
    value = rho + s / mo.m
    if not -1e-9 <= value <= 1.0 + 1e-9:
        log.warning("Cressie-Read estimate %.6g lies outside [0, 1]", value)
    return value


def _candidate_bound(stats: SuffStats, w_ex: float, budget: float):
    mo = _augmented(stats, w_ex, 0.0)
    var_w = mo.var_w
    if var_w <= 0:
        return None
    cov = mo.wu - mo.w * mo.u
    x = mo.u + (1.0 - mo.w) * cov / var_w
    y = (mo.u2 - mo.u * mo.u) - cov * cov / var_w
    z = budget / (2.0 * mo.m) - (1.0 - mo.w) ** 2 / (2.0 * var_w)
    if z < -1e-9 or y < -1e-9:
        log.debug("extra atom w=%g inapplicable (y=%g, z=%g)", w_ex, y, z)
        return None
    return x - math.sqrt(2.0 * max(y, 0.0) * max(z, 0.0))


def cr_lower(stats: SuffStats, range: WeightRange, alpha: float = 0.95) -> float:
    """Closed-form lower confidence bound, floored at 0."""
    _require(stats)
    budget = _mle_divergence(stats, range) + chi2_quantile(alpha)
    bounds = [
        b for b in (_candidate_bound(stats, w, budget) for w in (range.w_min, range.w_max)) if b is not None
    ]
    if not bounds:
        raise CRDisplayError("no extra atom admits a feasible closed form")
    value = min(bounds)
    if value > 1.0 + 1e-9:
        log.warning("Cressie-Read lower bound %.6g exceeds 1", value)
    return max(0.0, value)


def cr_upper(stats: SuffStats, range: WeightRange, alpha: float = 0.95) -> float:
    return 1.0 - cr_lower(stats.flipped(), range, alpha)
