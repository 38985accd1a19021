"""Synthetic environments, supervised-to-bandit conversion and experiment runners.

Every replication draws from its own generator seeded by ``(seed, n, rep)``,
so results do not depend on how replications are split across workers.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .data import DataError, Dataset, RawLoggedExample, ValidationError, WeightRange
from .elci import binomial_ci, ci, gaussian_ci
from .estimators import (
    EstimationError,
    clipped_dr_const_half,
    el_estimate,
    el_value_difference,
    emp_estimate,
    ips,
    snips,
)
from .learn import LearnConfig, LinearSoftmaxPolicy, LoggedBandit, learn_lb, learn_point

WEIGHT_SUPPORT = (0, 2, 1000)
SECOND_MOMENT = 100
SYNTHETIC_RANGE = WeightRange(0.0, 1000.0)
DEFAULT_NS = (10, 100, 1000, 10000)
ESTIMATORS = ("Constant", "ClippedDR", "IPS", "SNIPS", "EMP", "EL")
CI_METHODS = ("EL", "Binomial", "Gaussian")
_CHUNK = 250


def _moment_probs() -> tuple[Fraction, ...]:
    """Solve sum p = 1, E[w] = 1, E[w^2] = 100 on the three-point support, exactly."""
    a, b, c = (Fraction(v) for v in WEIGHT_SUPPORT)
    # with a = 0: p_b b + p_c c = 1 and p_b b^2 + p_c c^2 = SECOND_MOMENT
    assert a == 0
    p_c = (SECOND_MOMENT - b) / (c * c - b * c)
    p_b = (1 - p_c * c) / b
    return (1 - p_b - p_c, p_b, p_c)


WEIGHT_PROBS_EXACT = _moment_probs()


@dataclass(frozen=True)
class SyntheticEnv:
    """Three-point weight law with ``E[w] = 1``, ``E[w^2] = 100`` and rewards Bernoulli(value)."""

    value: float
    weight_support: tuple = WEIGHT_SUPPORT
    weight_probs_exact: tuple = WEIGHT_PROBS_EXACT

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError("value must lie in [0, 1]")

    @property
    def weight_probs(self) -> np.ndarray:
        return np.array([float(p) for p in self.weight_probs_exact])

    @property
    def reward_prob_given_w(self) -> dict:
        return {w: self.value for w in self.weight_support}

    def atoms(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """The six ``(w, r)`` outcomes and their probabilities."""
        w = np.repeat(np.array(self.weight_support, dtype=float), 2)
        r = np.tile([0.0, 1.0], len(self.weight_support))
        pw = np.repeat(self.weight_probs, 2)
        pr = np.tile([1.0 - self.value, self.value], len(self.weight_support))
        return w, r, pw * pr


def sample_synthetic_env(rng: np.random.Generator) -> SyntheticEnv:
    return SyntheticEnv(float(rng.uniform()))


def sample_dataset(env: SyntheticEnv, n: int, rng: np.random.Generator) -> Dataset:
    """``n`` i.i.d. draws, stored as atom counts (zero-count atoms dropped)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    w, r, p = env.atoms()
    counts = rng.multinomial(n, p / p.sum())
    keep = counts > 0
    return Dataset(w[keep], r[keep], SYNTHETIC_RANGE, counts[keep])


def _rep_rng(seed: int, n: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, n, rep]))


def _map(fn: Callable, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _chunks(seed: int, ns: Sequence[int], reps: int):
    return [(seed, int(n), lo, min(reps, lo + _CHUNK)) for n in ns for lo in range(0, reps, _CHUNK)]


def _gather(ns, reps, seed, jobs, worker) -> dict:
    if reps < 1:
        raise ValueError("reps must be at least 1")
    tasks = _chunks(seed, ns, reps)
    out: dict = {}
    for (_, n, _, _), block in zip(tasks, _map(worker, tasks, jobs)):
        out.setdefault(n, []).append(block)
    return {n: np.concatenate(blocks) for n, blocks in out.items()}


# ---------------------------------------------------------------- MSE


def _point_estimates(ds: Dataset) -> np.ndarray:
    try:
        sn = snips(ds)
    except EstimationError:
        sn = 0.5
    return np.array(
        [0.5, clipped_dr_const_half(ds), ips(ds), sn, emp_estimate(ds), el_estimate(ds, 0.5).value]
    )


def _mse_block(task) -> np.ndarray:
    seed, n, lo, hi = task
    out = np.empty((hi - lo, len(ESTIMATORS)))
    for i, rep in enumerate(range(lo, hi)):
        rng = _rep_rng(seed, n, rep)
        env = sample_synthetic_env(rng)
        out[i] = (_point_estimates(sample_dataset(env, n, rng)) - env.value) ** 2
    return out


@dataclass(frozen=True)
class MSERow:
    n: int
    estimator: str
    mse: float
    stderr: float


@dataclass
class MSEResult:
    rows: list
    errors: dict = field(default_factory=dict)
    """``n -> (reps, estimators)`` array of squared errors, columns in ``ESTIMATORS`` order."""


def mse_experiment(ns: Sequence[int] = DEFAULT_NS, reps: int = 1000, seed: int = 0, jobs: int = 1) -> MSEResult:
    """Squared error of each estimator over fresh environments and samples."""
    errors = _gather(ns, reps, seed, jobs, _mse_block)
    rows = []
    for n in ns:
        e = errors[int(n)]
        for j, name in enumerate(ESTIMATORS):
            col = e[:, j]
            se = float(col.std(ddof=1) / math.sqrt(len(col))) if len(col) > 1 else math.nan
            rows.append(MSERow(int(n), name, float(col.mean()), se))
    return MSEResult(rows, errors)


# ---------------------------------------------------------------- coverage


def _coverage_block(task) -> np.ndarray:
    """Columns: (covered, width) for each method in ``CI_METHODS``."""
    alpha, seed, n, lo, hi = task
    out = np.empty((hi - lo, 2 * len(CI_METHODS)))
    for i, rep in enumerate(range(lo, hi)):
        rng = _rep_rng(seed, n, rep)
        env = sample_synthetic_env(rng)
        ds = sample_dataset(env, n, rng)
        intervals = [ci(ds, alpha), binomial_ci(ds, alpha, rng)]
        intervals.append(gaussian_ci(ds, alpha) if n >= 2 else None)
        for j, iv in enumerate(intervals):
            if iv is None:
                out[i, 2 * j : 2 * j + 2] = math.nan
            else:
                out[i, 2 * j] = float(env.value in iv)
                out[i, 2 * j + 1] = iv.width
    return out


@dataclass(frozen=True)
class CoverageRow:
    n: int
    method: str
    coverage: float
    coverage_se: float
    mean_width: float
    width_se: float


@dataclass
class CoverageResult:
    rows: list
    raw: dict = field(default_factory=dict)
    """``n -> (reps, 2 * methods)`` array of (covered, width) pairs."""


def coverage_experiment(
    ns: Sequence[int] = DEFAULT_NS, reps: int = 1000, alpha: float = 0.95, seed: int = 0, jobs: int = 1
) -> CoverageResult:
    """Empirical coverage of the true value and interval widths per method."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if reps < 1:
        raise ValueError("reps must be at least 1")
    tasks = [(alpha,) + t for t in _chunks(seed, ns, reps)]
    raw: dict = {}
    for t, block in zip(tasks, _map(_coverage_block, tasks, jobs)):
        raw.setdefault(t[2], []).append(block)
    raw = {n: np.concatenate(b) for n, b in raw.items()}
    rows = []
    for n in ns:
        a = raw[int(n)]
        for j, name in enumerate(CI_METHODS):
            cov, wid = a[:, 2 * j], a[:, 2 * j + 1]
            if np.all(np.isnan(cov)):
                rows.append(CoverageRow(int(n), name, math.nan, math.nan, math.nan, math.nan))
                continue
            c = float(cov.mean())
            k = len(cov)
            rows.append(
                CoverageRow(
                    int(n),
                    name,
                    c,
                    math.sqrt(c * (1.0 - c) / k),
                    float(wid.mean()),
                    float(wid.std(ddof=1) / math.sqrt(k)) if k > 1 else math.nan,
                )
            )
    return CoverageResult(rows, raw)


# ---------------------------------------------------------------- bias


def bias_experiment(ns: Sequence[int], reps: int, seed: int = 0, jobs: int = 1) -> dict:
    """Mean and standard error of the EL value-difference estimate.

    In the synthetic environments rewards are independent of the weight, so
    the true difference is 0 and the mean is the bias.
    """
    diffs = _gather(ns, reps, seed, jobs, _bias_block)
    return {
        n: (float(d.mean()), float(d.std(ddof=1) / math.sqrt(len(d))) if len(d) > 1 else math.nan)
        for n, d in diffs.items()
    }


def _bias_block(task) -> np.ndarray:
    seed, n, lo, hi = task
    out = np.empty(hi - lo)
    for i, rep in enumerate(range(lo, hi)):
        rng = _rep_rng(seed, n, rep)
        out[i] = el_value_difference(sample_dataset(sample_synthetic_env(rng), n, rng))
    return out


# ---------------------------------------------------------------- tables


def write_table(rows: Sequence, fh, columns: Sequence[str]) -> None:
    """CSV with full-precision floats; ``rows`` are dataclass instances."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(getattr(row, c)) for c in columns])


def table_text(rows: Sequence, columns: Sequence[str]) -> str:
    buf = io.StringIO()
    write_table(rows, buf, columns)
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


MSE_COLUMNS = ("n", "estimator", "mse", "stderr")
COVERAGE_COLUMNS = ("n", "method", "coverage", "coverage_se", "mean_width", "width_se")
LEARNING_COLUMNS = ("dataset", "method", "mean_value", "t_vs_baseline")


# ---------------------------------------------------------------- supervised -> bandit


@dataclass(frozen=True)
class LabeledSet:
    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class BanditizedDataset:
    logged: list
    full_info: LabeledSet
    splits: tuple
    """``(initialize, learn, evaluate)`` as ``(start, stop)`` positions in the shuffled order."""
    logger: LinearSoftmaxPolicy
    n_actions: int
    epsilon: float
    learn_set: LabeledSet


def load_labeled_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Numeric features with the class label in the last column; a header row is optional."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    try:
        [float(v) for v in rows[0][:-1]]
    except ValueError:
        rows = rows[1:]
    width = len(rows[0]) if rows else 0
    if width < 2:
        raise DataError(f"{path}: need at least one feature column and a label column")
    X, labels = [], []
    for i, r in enumerate(rows, start=1):
        if len(r) != width:
            raise DataError(f"{path}: row {i} has {len(r)} columns, expected {width}")
        try:
            X.append([float(v) for v in r[:-1]])
        except ValueError:
            raise DataError(f"{path}: row {i} has a non-numeric feature") from None
        labels.append(r[-1].strip())
    classes, y = np.unique(np.array(labels), return_inverse=True)
    return np.array(X), y.reshape(-1)


def bundled_datasets() -> dict:
    """Paths of the bundled multiclass CSVs, keyed by name."""
    root = resources.files("elope") / "datasets"
    return {Path(p.name).stem: Path(str(p)) for p in sorted(root.iterdir(), key=lambda q: q.name) if p.name.endswith(".csv")}


def fit_softmax_logger(X: np.ndarray, y: np.ndarray, n_actions: int, lr: float = 0.5) -> LinearSoftmaxPolicy:
    """One pass of SGD on the multiclass logistic loss, in row order, from zero weights."""
    W = np.zeros((X.shape[1], n_actions))
    for x, label in zip(X, y):
        z = x @ W
        e = np.exp(z - z.max())
        g = e / e.sum()
        g[label] -= 1.0
        W -= lr * np.outer(x, g)
    return LinearSoftmaxPolicy(W)


def epsilon_greedy_probs(logger: LinearSoftmaxPolicy, X: np.ndarray, epsilon: float) -> np.ndarray:
    K = logger.actions
    greedy = np.argmax(X @ logger.weights, axis=1)
    P = np.full((len(X), K), epsilon / K)
    P[np.arange(len(X)), greedy] += 1.0 - epsilon
    return P


def log_actions(logger: LinearSoftmaxPolicy, data: LabeledSet, epsilon: float, rng: np.random.Generator) -> list:
    """One epsilon-greedy action per example with its exact propensity; reward 1 iff it hits the label."""
    P = epsilon_greedy_probs(logger, data.X, epsilon)
    cum = np.cumsum(P, axis=1)
    u = rng.uniform(size=len(data))
    a = np.minimum((u[:, None] >= cum).sum(axis=1), logger.actions - 1)
    p = P[np.arange(len(data)), a]
    r = (a == data.y).astype(float)
    return [RawLoggedExample(tuple(x), int(ai), float(pi), float(ri)) for x, ai, pi, ri in zip(data.X, a, p, r)]


def supervised_to_bandit(
    X: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    split_fracs: Sequence[float] = (0.2, 0.2, 0.6),
    rng: Optional[np.random.Generator] = None,
) -> BanditizedDataset:
    """Shuffle, split Initialize/Learn/Evaluate, fit a logger and log the Learn split."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    if len(split_fracs) != 3 or any(f <= 0 for f in split_fracs):
        raise ValueError("split_fracs needs three positive fractions")
    rng = rng if rng is not None else np.random.default_rng(0)
    X = np.asarray(X, dtype=float)
    classes, y = np.unique(np.asarray(y), return_inverse=True)
    y = y.reshape(-1)
    K = len(classes)
    if K < 2:
        raise ValidationError(["need at least two classes"])
    order = rng.permutation(len(y))
    X, y = X[order], y[order]
    total = float(sum(split_fracs))
    n_init = int(round(len(y) * split_fracs[0] / total))
    n_learn = int(round(len(y) * split_fracs[1] / total))
    splits = ((0, n_init), (n_init, n_init + n_learn), (n_init + n_learn, len(y)))
    if any(b <= a for a, b in splits):
        raise ValidationError(["a split is empty; need more rows"])
    mu = X[: splits[0][1]].mean(axis=0)
    sd = X[: splits[0][1]].std(axis=0)
    sd[sd == 0] = 1.0
    Z = np.column_stack([(X - mu) / sd, np.ones(len(y))])
    part = [LabeledSet(Z[a:b], y[a:b]) for a, b in splits]
    logger = fit_softmax_logger(part[0].X, part[0].y, K)
    logged = log_actions(logger, part[1], epsilon, rng)
    return BanditizedDataset(logged, part[2], splits, logger, K, epsilon, part[1])


def true_value(p: LinearSoftmaxPolicy, full_info: LabeledSet) -> float:
    """Expected 0/1 reward of ``p`` on fully labeled examples."""
    if len(full_info) == 0:
        raise ValueError("empty evaluation set")
    P = p.probs(full_info.X)
    return float(P[np.arange(len(full_info)), full_info.y].mean())


def paired_t(a: Sequence[float], b: Sequence[float]) -> float:
    """Paired t-statistic of ``a - b``; 0 when all differences vanish."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if len(d) < 2:
        raise ValueError("need at least two pairs")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
    return mean / (sd / math.sqrt(len(d)))


LEARN_METHODS = ("CI-LB", "EL", "IPS")


@dataclass(frozen=True)
class LearningRow:
    dataset: str
    method: str
    mean_value: float
    t_vs_baseline: float


@dataclass
class LearningResult:
    rows: list
    values: dict = field(default_factory=dict)
    """``(dataset, method) -> per-seed true values``."""


def _learn_one(task) -> tuple:
    name, X, y, seed, config, epsilon = task
    bd = supervised_to_bandit(X, y, epsilon, rng=np.random.default_rng(np.random.SeedSequence([seed, 7])))
    log = LoggedBandit.from_examples(bd.logged)
    cfg = LearnConfig(config.alpha, config.outer_iters, config.learning_rate, config.passes_per_iter, seed, config.temperature)
    init = LinearSoftmaxPolicy(bd.logger.weights, cfg.temperature)
    pols = (
        learn_lb(log, cfg, init)[0],
        learn_point(log, cfg, "el", init),
        learn_point(log, cfg, "ips", init),
    )
    return tuple(true_value(p, bd.full_info) for p in pols)


def learning_experiment(
    datasets: Mapping[str, tuple],
    seeds: Sequence[int],
    config: LearnConfig = LearnConfig(),
    epsilon: float = 0.25,
    jobs: int = 1,
) -> LearningResult:
    """Paired comparison of bound-maximizing vs point-estimate learning.

    Each seed reshuffles the data and relogs actions. ``t_vs_baseline`` is the
    paired t-statistic against IPS learning.
    """
    tasks = [(name, X, y, s, config, epsilon) for name, (X, y) in datasets.items() for s in seeds]
    results = _map(_learn_one, tasks, jobs)
    values: dict = {}
    for t, res in zip(tasks, results):
        for m, v in zip(LEARN_METHODS, res):
            values.setdefault((t[0], m), []).append(v)
    values = {k: np.array(v) for k, v in values.items()}
    rows = []
    for name in datasets:
        base = values[(name, "IPS")]
        for m in LEARN_METHODS:
            v = values[(name, m)]
            t = paired_t(v, base) if len(v) > 1 else math.nan
            rows.append(LearningRow(name, m, float(v.mean()), t))
    return LearningResult(rows, values)
