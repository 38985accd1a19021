"""Logged off-policy data: record types, ingestion and validation.

A :class:`Dataset` stores importance weights and rewards as read-only numpy
arrays together with per-row multiplicities, so a sample drawn from a
finite-support environment can be held as a handful of weighted atoms
instead of millions of rows. Every estimator in the package consumes the
``(w, r, counts)`` triple and is invariant to row order.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Input could not be parsed (malformed file, missing keys)."""


class ValidationError(ValueError):
    """Parsed input violates a data invariant."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class LoggedDatum:
    w: float
    r: float


@dataclass(frozen=True)
class RawLoggedExample:
    """One logged interaction ``(x, a, p, r)`` before weighting."""

    x: tuple
    a: int
    p: float
    r: float


@dataclass(frozen=True)
class WeightRange:
    """Admissible importance weights ``[w_min, w_max]``; must bracket 1."""

    w_min: float = 0.0
    w_max: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.w_min <= 1.0 <= self.w_max) or math.isnan(self.w_max):
            raise ValidationError(
                [f"weight range [{self.w_min}, {self.w_max}] must satisfy 0 <= w_min <= 1 <= w_max"]
            )


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """Ordered importance-weighted rewards with an admissible weight range.

    ``counts`` gives the multiplicity of each row (all ones for raw logs).
    Construction does not validate; use :func:`validate` or the loaders.
    """

    w: np.ndarray
    r: np.ndarray
    range: WeightRange = field(default_factory=WeightRange)
    counts: Optional[np.ndarray] = None

    def __post_init__(self):
        w = _readonly(self.w)
        r = _readonly(self.r)
        if w.shape != r.shape:
            raise DataError(f"w and r lengths differ ({w.size} vs {r.size})")
        c = np.ones_like(w) if self.counts is None else _readonly(self.counts)
        if c.shape != w.shape:
            raise DataError("counts must match w in length")
        c.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_items(cls, items: Iterable[LoggedDatum], range: Optional[WeightRange] = None) -> "Dataset":
        items = list(items)
        w = [d.w for d in items]
        r = [d.r for d in items]
        if range is None:
            range = default_range(w)
        return cls(w, r, range)

    @property
    def n(self) -> float:
        """Total sample size (sum of multiplicities)."""
        return float(self.counts.sum())

    def __len__(self) -> int:
        return self.w.size

    @property
    def items(self) -> list[LoggedDatum]:
        out = []
        for wi, ri, ci in zip(self.w, self.r, self.counts):
            out.extend([LoggedDatum(float(wi), float(ri))] * int(round(ci)))
        return out

    def __iter__(self) -> Iterator[LoggedDatum]:
        return iter(self.items)

    def with_rewards(self, r) -> "Dataset":
        return Dataset(self.w, r, self.range, self.counts)

    def flipped(self) -> "Dataset":
        """The same log with rewards mapped ``r -> 1 - r``."""
        return self.with_rewards(1.0 - self.r)

    def compressed(self) -> "Dataset":
        """Merge duplicate ``(w, r)`` rows into weighted atoms."""
        if len(self) == 0:
            return self
        pairs = np.stack([self.w, self.r], axis=1)
        uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
        c = np.bincount(inv.reshape(-1), weights=self.counts, minlength=len(uniq))
        return Dataset(uniq[:, 0], uniq[:, 1], self.range, c)


def default_range(w: Sequence[float]) -> WeightRange:
    """``[0, max observed w]``, widened so the range contains 1."""
    w_max = max([1.0, *[float(x) for x in w]])
    return WeightRange(0.0, w_max)


def weights_from_raw(example: RawLoggedExample, pi_prob: float) -> LoggedDatum:
    """Importance weight of a logged action under a target policy."""
    if not example.p > 0:
        raise ValidationError([f"logged propensity p={example.p} must be positive (absolute continuity)"])
    if not 0.0 <= pi_prob <= 1.0:
        raise ValidationError([f"target probability {pi_prob} outside [0, 1]"])
    return LoggedDatum(pi_prob / example.p, example.r)


def validate(ds: Dataset) -> list[str]:
    """Return every invariant violation found in ``ds`` (empty list when valid)."""
    problems = []
    lo, hi = ds.range.w_min, ds.range.w_max
    for i, (wi, ri, ci) in enumerate(zip(ds.w, ds.r, ds.counts)):
        if not np.isfinite(wi) or not np.isfinite(ri):
            problems.append(f"row {i}: non-finite value")
            continue
        if wi < 0:
            problems.append(f"row {i}: negative weight {wi}")
        elif not lo <= wi <= hi:
            problems.append(f"row {i}: weight outside range [{lo}, {hi}]: {wi}")
        if not 0.0 <= ri <= 1.0:
            problems.append(f"row {i}: reward out of range [0, 1]: {ri}")
        if ci < 0:
            problems.append(f"row {i}: negative count {ci}")
    return problems


def _check(ds: Dataset) -> Dataset:
    problems = validate(ds)
    if problems:
        raise ValidationError(problems)
    return ds


def _parse_record(obj: dict, lineno: int) -> LoggedDatum:
    try:
        if "w" in obj:
            return LoggedDatum(float(obj["w"]), float(obj["r"]))
        ex = RawLoggedExample(tuple(obj["x"]), int(obj["a"]), float(obj["p"]), float(obj["r"]))
        pi = float(obj["pi"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"line {lineno}: bad record ({exc!s})") from None
    try:
        return weights_from_raw(ex, pi)
    except ValidationError as exc:
        raise ValidationError([f"line {lineno}: {v}" for v in exc.violations]) from None


def load_jsonl(path, w_min: Optional[float] = None, w_max: Optional[float] = None) -> Dataset:
    """Read a JSONL log of ``{"w","r"}`` or ``{"x","a","p","pi","r"}`` records.

    An optional header object ``{"w_min": .., "w_max": ..}`` declares the
    weight range; explicit ``w_min``/``w_max`` arguments override it.
    """
    items = []
    header = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"line {lineno}: expected a JSON object")
            if "r" not in obj and ("w_min" in obj or "w_max" in obj):
                header = obj
                continue
            items.append(_parse_record(obj, lineno))
    return _assemble(items, header.get("w_min"), header.get("w_max"), w_min, w_max)


def load_csv(path, w_min: Optional[float] = None, w_max: Optional[float] = None) -> Dataset:
    """Read a CSV with a ``w,r`` header."""
    items = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"w", "r"} <= set(reader.fieldnames):
            raise DataError("CSV header must contain columns w,r")
        for lineno, row in enumerate(reader, start=2):
            try:
                items.append(LoggedDatum(float(row["w"]), float(row["r"])))
            except (TypeError, ValueError):
                raise DataError(f"line {lineno}: non-numeric w or r") from None
    return _assemble(items, None, None, w_min, w_max)


def load(path, w_min: Optional[float] = None, w_max: Optional[float] = None) -> Dataset:
    """Dispatch on file suffix (``.csv`` or JSONL)."""
    if Path(path).suffix.lower() == ".csv":
        return load_csv(path, w_min, w_max)
    return load_jsonl(path, w_min, w_max)


def _assemble(items, hdr_min, hdr_max, w_min, w_max) -> Dataset:
    lo = w_min if w_min is not None else hdr_min
    hi = w_max if w_max is not None else hdr_max
    default = default_range([d.w for d in items])
    rng = WeightRange(
        float(lo) if lo is not None else default.w_min,
        float(hi) if hi is not None else default.w_max,
    )
    return _check(Dataset.from_items(items, rng))


def write_jsonl(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"w_min": ds.range.w_min, "w_max": ds.range.w_max}) + "\n")
        for d in ds.items:
            fh.write(json.dumps({"w": d.w, "r": d.r}) + "\n")
