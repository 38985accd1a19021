"""Command-line interface.

Exit codes: 0 success, 1 unreadable or malformed input, 2 invalid arguments
or data, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import crpower, sim
from .data import DataError, ValidationError, load
from .elci import binomial_ci, ci, gaussian_ci
from .estimators import EstimationError, clipped_dr_const_half, el_estimate, emp_estimate, ips, snips
from .learn import LearnConfig, LinearSoftmaxPolicy, LoggedBandit, learn_lb, learn_point
from .solvers import SolverError

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3


# ---------------------------------------------------------------- argument types


def _alpha(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return v


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return v


def _epsilon(text: str) -> float:
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError("epsilon must lie in (0, 1]")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _ns(text: str) -> list:
    try:
        out = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected a comma-separated list of integers") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("sample sizes must be positive")
    return out


# ---------------------------------------------------------------- output helpers


def _num(v: Optional[float]):
    """JSON-safe float (non-finite values become null)."""
    if v is None or not math.isfinite(v):
        return None
    return float(v)


def _fmt6(v: Optional[float]) -> str:
    if v is None or not math.isfinite(v):
        return "n/a"
    return f"{v:.6f}"


def _print_table(rows: Sequence[Sequence[str]], out) -> None:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        out.write("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() + "\n")


def _try(fn, *args):
    try:
        return fn(*args), ""
    except (EstimationError, crpower.CRDisplayError, ValueError) as exc:
        return None, str(exc)


def _open_out(path: Optional[str]):
    return open(path, "w", newline="") if path else contextlib.nullcontext(sys.stdout)


# ---------------------------------------------------------------- commands


def cmd_estimate(args) -> int:
    ds = load(args.input, args.wmin, args.wmax)
    est = el_estimate(ds, args.rho)
    sn, sn_msg = _try(snips, ds)
    cr, cr_msg = _try(crpower.cr_estimate, crpower.from_dataset(ds), ds.range, args.rho)
    result = {
        "n": ds.n,
        "w_min": ds.range.w_min,
        "w_max": ds.range.w_max,
        "rho": args.rho,
        "ips": ips(ds),
        "snips": sn,
        "clipped_dr": clipped_dr_const_half(ds),
        "emp": emp_estimate(ds),
        "el": {"value": est.value, "lo": est.lo, "hi": est.hi, "beta_star": est.beta_star, "is_point": est.is_point},
        "cr": cr,
    }
    if args.json:
        out = {k: (_num(v) if isinstance(v, float) or v is None else v) for k, v in result.items()}
        out["el"] = {k: (_num(v) if isinstance(v, float) else v) for k, v in result["el"].items()}
        print(json.dumps(out))
    else:
        rows = [("estimator", "value", "detail")]
        rows.append(("IPS", _fmt6(result["ips"]), ""))
        rows.append(("SNIPS", _fmt6(sn), sn_msg))
        rows.append(("ClippedDR", _fmt6(result["clipped_dr"]), ""))
        rows.append(("EMP", _fmt6(result["emp"]), ""))
        rows.append(
            (
                f"EL(rho={args.rho:g})",
                _fmt6(est.value),
                f"interval [{_fmt6(est.lo)}, {_fmt6(est.hi)}] beta*={_fmt6(est.beta_star)}",
            )
        )
        rows.append(("CR", _fmt6(cr), cr_msg))
        _print_table(rows, sys.stdout)
    return EXIT_OK


def cmd_ci(args) -> int:
    ds = load(args.input, args.wmin, args.wmax)
    intervals = {}
    notes = {}
    el = ci(ds, args.alpha)
    intervals["EL"] = (el.lo, el.hi)
    if el.diagnostic:
        notes["EL"] = el.diagnostic
    b = binomial_ci(ds, args.alpha, np.random.default_rng(args.seed))
    intervals["Binomial"] = (b.lo, b.hi)
    g, msg = _try(gaussian_ci, ds, args.alpha)
    intervals["Gaussian"] = (g.lo, g.hi) if g else (None, None)
    if msg:
        notes["Gaussian"] = msg
    stats = crpower.from_dataset(ds)
    lo, lo_msg = _try(crpower.cr_lower, stats, ds.range, args.alpha)
    hi, hi_msg = _try(crpower.cr_upper, stats, ds.range, args.alpha)
    intervals["CR"] = (lo, hi)
    if lo_msg or hi_msg:
        notes["CR"] = lo_msg or hi_msg
    if args.json:
        print(
            json.dumps(
                {
                    "alpha": args.alpha,
                    "n": ds.n,
                    "intervals": {k: {"lo": _num(a), "hi": _num(c)} for k, (a, c) in intervals.items()},
                    "notes": notes,
                }
            )
        )
    else:
        rows = [("method", "lo", "hi", "note")]
        for k, (a, c) in intervals.items():
            rows.append((k, _fmt6(a), _fmt6(c), notes.get(k, "")))
        _print_table(rows, sys.stdout)
    return EXIT_OK


def cmd_simulate_mse(args) -> int:
    res = sim.mse_experiment(args.ns, args.reps, args.seed, args.jobs)
    with _open_out(args.output) as fh:
        sim.write_table(res.rows, fh, sim.MSE_COLUMNS)
    return EXIT_OK


def cmd_simulate_coverage(args) -> int:
    res = sim.coverage_experiment(args.ns, args.reps, args.alpha, args.seed, args.jobs)
    with _open_out(args.output) as fh:
        sim.write_table(res.rows, fh, sim.COVERAGE_COLUMNS)
    return EXIT_OK


def _banditize(args):
    X, y = sim.load_labeled_csv(args.input)
    return sim.supervised_to_bandit(X, y, args.epsilon, rng=np.random.default_rng(args.seed))


def cmd_transform(args) -> int:
    bd = _banditize(args)
    greedy = np.argmax(bd.learn_set.X @ bd.logger.weights, axis=1)
    # every action keeps probability at least epsilon / K under the logger
    header = {"w_min": 0.0, "w_max": bd.n_actions / bd.epsilon}
    with _open_out(args.output) as fh:
        fh.write(json.dumps(header) + "\n")
        for ex, g in zip(bd.logged, greedy):
            rec = {"x": list(ex.x), "a": ex.a, "p": ex.p, "pi": 1.0 if ex.a == g else 0.0, "r": ex.r}
            fh.write(json.dumps(rec) + "\n")
    return EXIT_OK


def cmd_learn(args) -> int:
    bd = _banditize(args)
    log = LoggedBandit.from_examples(bd.logged)
    cfg = LearnConfig(args.alpha, args.outer_iters, args.lr, args.passes, args.seed)
    init = LinearSoftmaxPolicy(bd.logger.weights, cfg.temperature)
    if args.method == "lb":
        policy, trace = learn_lb(log, cfg, init)
    else:
        trace = []
        policy = learn_point(log, cfg, args.method, init, trace=trace)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "policy.json").write_text(policy.to_json() + "\n")
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "lb", "el_estimate", "ips"])
        for row in trace:
            w.writerow([row.iter, repr(row.lb), repr(row.el_estimate), repr(row.ips)])
    evaluation = [
        ("logger", sim.true_value(init, bd.full_info)),
        (args.method, sim.true_value(policy, bd.full_info)),
    ]
    with open(out / "evaluation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "true_value"])
        for name, v in evaluation:
            w.writerow([name, repr(v)])
    if args.json:
        print(json.dumps({name: v for name, v in evaluation}))
    else:
        _print_table([("policy", "true_value")] + [(n, _fmt6(v)) for n, v in evaluation], sys.stdout)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elope", description="Off-policy value estimates, intervals and learning.")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--input", "-i", required=True, help="JSONL or CSV log of importance weights and rewards")
        sp.add_argument("--wmin", type=_nonneg_float, default=None, help="smallest possible importance weight")
        sp.add_argument("--wmax", type=_nonneg_float, default=None, help="largest possible importance weight")
        sp.add_argument("--json", action="store_true", help="machine-readable output at full precision")

    sp = sub.add_parser("estimate", help="point estimates of the target policy's value")
    data_args(sp)
    sp.add_argument("--rho", type=_unit, default=0.5, help="reward assigned to unobserved mass (EL and CR)")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("ci", help="confidence intervals")
    data_args(sp)
    sp.add_argument("--alpha", type=_alpha, default=0.95, help="nominal coverage")
    sp.add_argument("--seed", type=int, default=0, help="seed for the binomial interval's randomized rounding")
    sp.set_defaults(func=cmd_ci)

    def sim_args(sp):
        sp.add_argument("--ns", type=_ns, default=list(sim.DEFAULT_NS), help="comma-separated sample sizes")
        sp.add_argument("--reps", type=_positive_int, default=1000, help="replications per sample size")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (output is unaffected)")
        sp.add_argument("--output", "-o", default=None, help="CSV path (default: stdout)")

    sp = sub.add_parser("simulate-mse", help="MSE of point estimators on synthetic environments")
    sim_args(sp)
    sp.set_defaults(func=cmd_simulate_mse)

    sp = sub.add_parser("simulate-coverage", help="coverage and width of intervals on synthetic environments")
    sim_args(sp)
    sp.add_argument("--alpha", type=_alpha, default=0.95)
    sp.set_defaults(func=cmd_simulate_coverage)

    def labeled_args(sp):
        sp.add_argument("--input", "-i", required=True, help="labeled CSV, class label in the last column")
        sp.add_argument("--epsilon", type=_epsilon, default=0.25, help="exploration rate of the logging policy")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("transform", help="turn a labeled CSV into logged bandit feedback (JSONL)")
    labeled_args(sp)
    sp.add_argument("--output", "-o", default=None, help="JSONL path (default: stdout)")
    sp.set_defaults(func=cmd_transform)

    sp = sub.add_parser("learn", help="learn a linear softmax policy from simulated bandit feedback")
    labeled_args(sp)
    sp.add_argument("--method", choices=("lb", "el", "ips"), default="lb", help="objective to maximize")
    sp.add_argument("--alpha", type=_alpha, default=0.95)
    sp.add_argument("--outer-iters", type=_positive_int, default=4)
    sp.add_argument("--passes", type=_positive_int, default=1, help="SGD passes per outer iteration")
    sp.add_argument("--lr", type=_nonneg_float, default=0.1)
    sp.add_argument("--output", "-o", required=True, help="directory for policy.json, trace.csv, evaluation.csv")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_learn)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, DataError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverError, EstimationError, ArithmeticError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
