"""Offline policy learning from logged bandit feedback.

``learn_lb`` maximizes the EL lower confidence bound of a linear softmax
policy by alternating two phases: with the policy fixed, solve the
lower-bound dual exactly (``dual_step``); with the duals ``(beta, gamma,
kappa)`` fixed, take stochastic gradient steps on

    F(pi) = kappa * sum_n log(gamma + beta w_n(pi) + w_n(pi) r_n),
    w_n(pi) = pi(a_n | x_n) / p_n.

``learn_point`` runs the same loop on a point estimate (EL or IPS) instead.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .data import Dataset, RawLoggedExample, WeightRange
from .elci import DualSolution, ci_lower
from .estimators import DEFAULT_RHO, el_estimate, ips, solve_beta_star


@dataclass(frozen=True)
class LinearSoftmaxPolicy:
    """``pi(.|x) = softmax(x @ weights / temperature)``; ``weights`` is features x actions."""

    weights: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        W = np.array(self.weights, dtype=float)
        if W.ndim != 2:
            raise ValueError("weights must be a (features, actions) matrix")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        W.flags.writeable = False
        object.__setattr__(self, "weights", W)

    @classmethod
    def zeros(cls, dims: int, actions: int, temperature: float = 1.0) -> "LinearSoftmaxPolicy":
        return cls(np.zeros((dims, actions)), temperature)

    @property
    def dims(self) -> int:
        return self.weights.shape[0]

    @property
    def actions(self) -> int:
        return self.weights.shape[1]

    def probs(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dims:
            raise ValueError(f"expected {self.dims} features, got {X.shape[1]}")
        z = X @ self.weights / self.temperature
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def to_json(self) -> str:
        return json.dumps(
            {
                "dims": self.dims,
                "actions": self.actions,
                "temperature": self.temperature,
                "weights": self.weights.reshape(-1).tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "LinearSoftmaxPolicy":
        obj = json.loads(text)
        W = np.array(obj["weights"], dtype=float).reshape(obj["dims"], obj["actions"])
        return cls(W, obj["temperature"])


def policy_probs(p: LinearSoftmaxPolicy, x) -> np.ndarray:
    return p.probs(np.asarray(x, dtype=float).reshape(1, -1))[0]


@dataclass(frozen=True)
class LoggedBandit:
    """Column-wise view of a list of :class:`RawLoggedExample`."""

    X: np.ndarray
    a: np.ndarray
    p: np.ndarray
    r: np.ndarray

    @classmethod
    def from_examples(cls, raw: Sequence[RawLoggedExample]) -> "LoggedBandit":
        if not raw:
            raise ValueError("no logged examples")
        return cls(
            np.array([e.x for e in raw], dtype=float),
            np.array([e.a for e in raw], dtype=int),
            np.array([e.p for e in raw], dtype=float),
            np.array([e.r for e in raw], dtype=float),
        )

    def examples(self) -> list[RawLoggedExample]:
        return [RawLoggedExample(tuple(x), int(a), float(p), float(r)) for x, a, p, r in zip(self.X, self.a, self.p, self.r)]

    def __len__(self) -> int:
        return len(self.a)


Logs = Union[LoggedBandit, Sequence[RawLoggedExample]]


def _as_log(raw: Logs) -> LoggedBandit:
    return raw if isinstance(raw, LoggedBandit) else LoggedBandit.from_examples(raw)


@dataclass(frozen=True)
class LearnConfig:
    alpha: float = 0.95
    outer_iters: int = 4
    learning_rate: float = 0.1
    passes_per_iter: int = 1
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")


@dataclass(frozen=True)
class TraceRow:
    iter: int
    lb: float
    el_estimate: float
    ips: float


def induced_dataset(p: LinearSoftmaxPolicy, raw: Logs) -> Dataset:
    """Importance weights of ``p`` on the log; range ``[0, 1 / min_n p_n]``."""
    log = _as_log(raw)
    if np.any(log.p <= 0):
        raise ValueError("logged propensities must be positive")
    pi = p.probs(log.X)[np.arange(len(log)), log.a]
    w_max = max(1.0, 1.0 / float(log.p.min()))
    w = np.minimum(pi / log.p, w_max)
    return Dataset(w, log.r, WeightRange(0.0, w_max))


def lb_objective(p: LinearSoftmaxPolicy, raw: Logs, alpha: float = 0.95) -> float:
    return ci_lower(induced_dataset(p, raw), alpha)[0]


def dual_step(p: LinearSoftmaxPolicy, raw: Logs, alpha: float = 0.95) -> DualSolution:
    return ci_lower(induced_dataset(p, raw), alpha)[1]


def _pi_grad(probs_row: np.ndarray, x: np.ndarray, a: int, temperature: float) -> np.ndarray:
    # d pi(a|x) / dW for W of shape (features, actions)
    e = -probs_row.copy()
    e[a] += 1.0
    return probs_row[a] * np.outer(x, e) / temperature


def surrogate_value(p: LinearSoftmaxPolicy, duals: DualSolution, raw: Logs) -> float:
    """Fixed-dual lower-bound surrogate ``F(pi)``."""
    log = _as_log(raw)
    w = p.probs(log.X)[np.arange(len(log)), log.a] / log.p
    s = duals.gamma + duals.beta * w + w * log.r
    if np.any(s <= 0):
        return -math.inf
    return duals.kappa * float(np.sum(np.log(s)))


def surrogate_grad(p: LinearSoftmaxPolicy, duals: DualSolution, raw: Logs) -> np.ndarray:
    """Analytic gradient of :func:`surrogate_value` with respect to the weights."""
    log = _as_log(raw)
    if duals.kappa == 0:
        return np.zeros_like(p.weights)
    P = p.probs(log.X)
    idx = np.arange(len(log))
    pa = P[idx, log.a]
    w = pa / log.p
    s = duals.gamma + duals.beta * w + w * log.r
    coef = duals.kappa * (duals.beta + log.r) / (s * log.p)
    E = -P
    E[idx, log.a] += 1.0
    return log.X.T @ ((coef * pa)[:, None] * E) / p.temperature


def _sgd(p: LinearSoftmaxPolicy, raw: LoggedBandit, lr: float, passes: int, rng, example_grad, guard=None):
    W = np.array(p.weights)
    T = p.temperature
    n = len(raw)
    for _ in range(passes):
        for i in rng.permutation(n):
            x = raw.X[i]
            step = lr
            for _attempt in range(40):
                if step == 0:
                    break
                probs = _softmax_row(x @ W / T)
                g = example_grad(i, probs)
                if g == 0:
                    break
                cand = W + step * g * _pi_grad(probs, x, raw.a[i], T)
                if np.all(np.isfinite(cand)) and (guard is None or guard(i, _softmax_row(x @ cand / T))):
                    W = cand
                    break
                step *= 0.5
    return LinearSoftmaxPolicy(W, T)


def _softmax_row(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def policy_step(
    p: LinearSoftmaxPolicy,
    duals: DualSolution,
    raw: Logs,
    lr: float,
    passes: int = 1,
    rng: Optional[np.random.Generator] = None,
) -> LinearSoftmaxPolicy:
    """SGD passes on the fixed-dual surrogate.

    Each example contributes ``N * kappa * (beta + r_n) / (s_n p_n)`` times
    the gradient of ``pi(a_n|x_n)``, an unbiased estimate of the full
    gradient. A step that would drive ``s_n`` to zero is retried at half the
    learning rate.
    """
    log = _as_log(raw)
    rng = rng if rng is not None else np.random.default_rng(0)
    n = len(log)
    b, g, k = duals.beta, duals.gamma, duals.kappa
    if k == 0:
        # no logged reward mass: the bound is 0 for every policy
        return p

    def slack(i, probs):
        w = probs[log.a[i]] / log.p[i]
        return g + b * w + w * log.r[i]

    def example_grad(i, probs):
        s = slack(i, probs)
        return n * k * (b + log.r[i]) / (s * log.p[i])

    return _sgd(p, log, lr, passes, rng, example_grad, guard=lambda i, probs: slack(i, probs) > 0)


def _trace_row(it: int, p: LinearSoftmaxPolicy, log: LoggedBandit, alpha: float, lb=None) -> TraceRow:
    ds = induced_dataset(p, log)
    if lb is None:
        lb = ci_lower(ds, alpha)[0]
    return TraceRow(it, lb, el_estimate(ds).value, ips(ds))


def learn_lb(
    raw: Logs, config: LearnConfig = LearnConfig(), init: Optional[LinearSoftmaxPolicy] = None
) -> tuple[LinearSoftmaxPolicy, list[TraceRow]]:
    """Alternate exact dual solves and policy SGD; trace the bound after each dual solve."""
    log = _as_log(raw)
    rng = np.random.default_rng(config.seed)
    policy = init or LinearSoftmaxPolicy.zeros(log.X.shape[1], int(log.a.max()) + 1, config.temperature)
    trace = []
    for it in range(config.outer_iters):
        lb, duals = ci_lower(induced_dataset(policy, log), config.alpha)
        trace.append(_trace_row(it, policy, log, config.alpha, lb))
        policy = policy_step(policy, duals, log, config.learning_rate, config.passes_per_iter, rng)
    return policy, trace


def learn_point(
    raw: Logs,
    config: LearnConfig = LearnConfig(),
    objective: str = "el",
    init: Optional[LinearSoftmaxPolicy] = None,
    rho: float = DEFAULT_RHO,
    trace: Optional[list] = None,
) -> LinearSoftmaxPolicy:
    """Same loop shape, ascending the EL point estimate (``"el"``) or IPS (``"ips"``).

    Pass a list as ``trace`` to collect a :class:`TraceRow` per outer iteration.
    """
    if objective not in ("el", "ips"):
        raise ValueError("objective must be 'el' or 'ips'")
    log = _as_log(raw)
    rng = np.random.default_rng(config.seed)
    policy = init or LinearSoftmaxPolicy.zeros(log.X.shape[1], int(log.a.max()) + 1, config.temperature)
    for it in range(config.outer_iters):
        if trace is not None:
            trace.append(_trace_row(it, policy, log, config.alpha))
        if objective == "ips":

            def example_grad(i, probs):
                return log.r[i] / log.p[i]

        else:
            beta = solve_beta_star(induced_dataset(policy, log))

            def example_grad(i, probs, beta=beta):
                w = probs[log.a[i]] / log.p[i]
                d = 1.0 + beta * (w - 1.0)
                if d <= 1e-12:
                    # reweighting saturates at this weight; no usable direction
                    return 0.0
                return (log.r[i] - rho) * (1.0 - beta) / (d * d * log.p[i])

        policy = _sgd(policy, log, config.learning_rate, config.passes_per_iter, rng, example_grad)
    return policy
