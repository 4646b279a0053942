"""Command-line front end.

Commands:
    explore     build the full state space, print exploration statistics
    check       evaluate one query on one model
    rare        statistical estimation of rare reachability probabilities
    bench       run a benchmark manifest, emit CSV data and figures
    fetch-qvbs  obtain the external benchmark models (network required)

Exit codes: 0 solved, 2 unsupported query/feature, 3 timeout,
4 model error, 5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import re
import sys
import threading
import time

import numpy as np

from . import expressions as ex
from .ctmc import eval_goal, transient_prob, transient_window, truncated_build
from .errors import (
    InfiniteRewardError,
    ModelSyntaxError,
    ModelTypeError,
    QcheckError,
    QueryError,
    SolverError,
    StateDomainError,
    UnsupportedFeatureError,
)
from .explore import build_state_space, label_states
from .games import solve_tsg, solve_tsg_reward
from .jani import parse_jani_file
from .multiobj import MultiObjective, achievability, numerical, pareto2
from .objectives import lra_reward, reach_prob, steady_state, total_reward
from .pomdp import unfold_with_cutoffs
from .queries import parse_query
from .rare import (
    derive_importance,
    estimate_crude,
    estimate_splitting,
    select_thresholds,
)
from .robust import robust_reach

EXIT_SOLVED = 0
EXIT_UNSUPPORTED = 2
EXIT_TIMEOUT = 3
EXIT_MODEL_ERROR = 4
EXIT_INTERNAL = 5

CHECK_CSV_COLUMNS = [
    "model", "query", "status", "value", "lower", "upper",
    "states", "transitions", "build_seconds", "solve_seconds",
]


class CliTimeout(Exception):
    """Raised when the timeout monitor fires; carries partial statistics."""

    def __init__(self, progress):
        super().__init__("timeout")
        self.progress = progress


def _parse_timeout(text):
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*(ms|s|m|h)?\s*", text)
    if m is None:
        raise argparse.ArgumentTypeError(f"cannot parse timeout {text!r}")
    value = float(m.group(1))
    unit = m.group(2) or "s"
    return value * {"ms": 1e-3, "s": 1.0, "m": 60.0, "h": 3600.0}[unit]


def _parse_constants(text):
    """Parse 'N=2,K=5' style constant overrides into typed values."""
    if not text:
        return {}
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise argparse.ArgumentTypeError(f"bad constant binding {part!r}")
        name, _, raw = part.partition("=")
        name, raw = name.strip(), raw.strip()
        if raw in ("true", "false"):
            out[name] = raw == "true"
        else:
            try:
                out[name] = int(raw)
            except ValueError:
                out[name] = float(raw)
    return out


def _run_with_timeout(fn, seconds, progress):
    """Run fn(); on expiry raise CliTimeout with whatever statistics the
    work recorded into `progress` so far. The worker is a daemon thread:
    it cannot be cancelled, but it no longer blocks process exit."""
    if not seconds:
        return fn()
    box = {}

    def work():
        try:
            box["result"] = fn()
        except BaseException as e:  # re-raised on the main thread
            box["error"] = e

    th = threading.Thread(target=work, daemon=True)
    th.start()
    th.join(seconds)
    if th.is_alive():
        raise CliTimeout(progress)
    if "error" in box:
        raise box["error"]
    return box["result"]


def _goal_mask(em, expr):
    label_states(em, {"__goal__": expr})
    return em.labels.pop("__goal__")


def _resolve_reward_name(em, name):
    if name is not None:
        if name not in em.state_rewards:
            raise QueryError(f"unknown reward structure {name!r}")
        return name
    names = sorted(em.state_rewards)
    if len(names) == 1:
        return names[0]
    if not names:
        raise QueryError("the model defines no reward structure")
    raise QueryError(
        f"reward name required; model defines {', '.join(names)}"
    )


def _all_players(em):
    if not em.player_names:
        raise QueryError("game query on a model without a player partition")
    return list(em.player_names)


def _to_multiobj(em, objectives):
    objs = []
    for o in objectives:
        goal = _goal_mask(em, o.goal)
        reward = _resolve_reward_name(em, o.reward) if o.kind == "total-reward" else None
        objs.append(
            MultiObjective(o.kind, goal, reward=reward, negate=o.direction == "min")
        )
    return objs


def _solve_query(model, em, q, args, record):
    """Dispatch one parsed query; fills `record` and returns the exit code."""
    epsilon = args.epsilon
    method = args.method

    def bounds_result(lower, upper, note=None):
        record["lower"] = float(lower)
        record["upper"] = float(upper)
        record["value"] = 0.5 * (float(lower) + float(upper))
        if note:
            record["note"] = note

    if q.kind == "reach-prob":
        goal = _goal_mask(em, q.goal)
        if em.model_type == "pomdp":
            direction = q.direction or "max"
            _, bound = unfold_with_cutoffs(
                em, goal, direction, budget=args.pomdp_budget, epsilon=epsilon
            )
            side = "lower" if direction == "max" else "upper"
            record["value"] = float(bound)
            record[side] = float(bound)
            record["note"] = (
                f"{side} bound from belief unfolding "
                f"(budget {args.pomdp_budget})"
            )
        elif em.model_type == "tsg":
            vb = solve_tsg(em, goal, _all_players(em), q.direction or "max",
                           method, epsilon)
            bounds_result(vb.lower[em.initial], vb.upper[em.initial])
        elif em.is_interval:
            raise QueryError(
                "interval models need a robust direction pair "
                "(Pmaxmin, Pmaxmax, Pminmin, Pminmax)"
            )
        else:
            vb = reach_prob(em, goal, q.direction, method, epsilon)
            bounds_result(vb.lower[em.initial], vb.upper[em.initial])

    elif q.kind == "robust-reach":
        goal = _goal_mask(em, q.goal)
        vb = robust_reach(em, goal, q.direction, q.inner_direction, method, epsilon)
        bounds_result(vb.lower[em.initial], vb.upper[em.initial])

    elif q.kind == "transient-prob":
        if args.truncate_kappa is not None:
            tm = record.pop("_truncated")
            fn = ex.compile_expr(q.goal, tm.em.compiled.var_index)
            goal = eval_goal(tm, fn)
            lo, hi = transient_window(tm, goal, q.time_bound, epsilon)
            bounds_result(lo, hi, note=f"truncation window, kappa={args.truncate_kappa}")
            record["states"] = tm.em.n
        else:
            goal = _goal_mask(em, q.goal)
            vb = transient_prob(em, goal, q.time_bound, epsilon)
            bounds_result(vb.lower[em.initial], vb.upper[em.initial])

    elif q.kind == "total-reward":
        reward = _resolve_reward_name(em, q.reward)
        goal = _goal_mask(em, q.goal)
        if em.model_type == "pomdp":
            direction = q.direction or "max"
            _, bound = unfold_with_cutoffs(
                em, goal, direction, budget=args.pomdp_budget,
                epsilon=epsilon, reward=reward,
            )
            side = "lower" if direction == "max" else "upper"
            record["value"] = float(bound)
            record[side] = float(bound)
            record["note"] = (
                f"{side} bound from belief unfolding "
                f"(budget {args.pomdp_budget})"
            )
        elif em.model_type == "tsg":
            vb = solve_tsg_reward(em, reward, goal, _all_players(em),
                                  q.direction or "max", epsilon)
            bounds_result(vb.lower[em.initial], vb.upper[em.initial])
        else:
            vb = total_reward(em, reward, goal, q.direction, method, epsilon)
            bounds_result(vb.lower[em.initial], vb.upper[em.initial])

    elif q.kind == "lra-reward":
        reward = _resolve_reward_name(em, q.reward)
        res = lra_reward(em, reward, q.direction, epsilon)
        bounds_result(res.bounds.lower[em.initial], res.bounds.upper[em.initial])

    elif q.kind == "steady-state":
        goal = _goal_mask(em, q.goal)
        res = steady_state(em, goal, epsilon)
        bounds_result(res.bounds.lower[em.initial], res.bounds.upper[em.initial])

    elif q.kind == "game-reach":
        goal = _goal_mask(em, q.goal)
        vb = solve_tsg(em, goal, q.coalition, q.direction or "max", method, epsilon)
        bounds_result(vb.lower[em.initial], vb.upper[em.initial])

    elif q.kind == "game-reward":
        reward = _resolve_reward_name(em, q.reward)
        goal = _goal_mask(em, q.goal)
        vb = solve_tsg_reward(em, reward, goal, q.coalition,
                              q.direction or "max", epsilon)
        bounds_result(vb.lower[em.initial], vb.upper[em.initial])

    elif q.kind == "multi-achieve":
        objs = _to_multiobj(em, q.objectives)
        v = achievability(em, objs, q.point, epsilon)
        record["value"] = v.status
        record["margin"] = float(v.margin)
        record["oracle_calls"] = v.oracle_calls

    elif q.kind == "multi-numerical":
        objs = _to_multiobj(em, q.objectives)
        free = next(i for i, o in enumerate(q.objectives) if o.bound is None)
        thresholds = [o.bound for o in q.objectives]
        lo, hi = numerical(em, objs, free, thresholds, epsilon)
        bounds_result(lo, hi)

    elif q.kind == "multi-pareto":
        objs = _to_multiobj(em, q.objectives)
        pa = pareto2(em, objs, epsilon=max(epsilon, 1e-4))
        record["vertices"] = [[float(x) for x in r.point] for r in pa.vertices]
        record["gap"] = float(pa.gap)
        record["value"] = f"{len(pa.vertices)} Pareto vertices"
        if args.report:
            _render_pareto(args.report, pa, q)

    elif q.kind == "rare-estimate":
        raise QueryError("rare queries run under the 'rare' command")

    else:
        raise QueryError(f"unhandled query kind {q.kind!r}")

    return EXIT_SOLVED


def _render_pareto(report_dir, pa, q):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(report_dir, exist_ok=True)
    pts = np.array([r.point for r in pa.vertices], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    order = np.argsort(pts[:, 0])
    ax.plot(pts[order, 0], pts[order, 1], "o-")
    ax.set_xlabel("objective 1")
    ax.set_ylabel("objective 2")
    ax.set_title("Pareto front approximation")
    fig.tight_layout()
    fig.savefig(os.path.join(report_dir, "pareto.png"), dpi=150)
    plt.close(fig)
    with open(os.path.join(report_dir, "pareto.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["objective_1", "objective_2"])
        for row in pts[order]:
            w.writerow([f"{row[0]:.9g}", f"{row[1]:.9g}"])


def _emit(record, args):
    """Human lines to stdout; --json swaps them for one JSON object;
    --csv additionally writes a one-row delimited file."""
    if args.json:
        print(json.dumps(record, indent=2, default=str))
    else:
        for key, val in record.items():
            if key.startswith("_"):
                continue
            if isinstance(val, float):
                print(f"{key}: {val:.9g}")
            else:
                print(f"{key}: {val}")
    if getattr(args, "csv", None):
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CHECK_CSV_COLUMNS)
            w.writerow([record.get(c, "") for c in CHECK_CSV_COLUMNS])


def _build(args, record, query=None):
    """Parse + explore, recording build statistics as they become known."""
    model = parse_jani_file(args.model, constants=_parse_constants(args.const))
    t0 = time.perf_counter()
    if getattr(args, "truncate_kappa", None) is not None:
        if query is None or query.kind != "transient-prob":
            raise QueryError("--truncate-kappa applies to time-bounded ctmc queries")
        tm = truncated_build(model, args.truncate_kappa, t=query.time_bound)
        record["_truncated"] = tm
        record["states"] = tm.em.n
        record["transitions"] = int(len(tm.em.branch_col))
        record["build_seconds"] = time.perf_counter() - t0
        return model, tm.em
    em, stats = build_state_space(
        model, workers=args.workers, max_states=args.max_states
    )
    record["states"] = stats.states
    record["transitions"] = stats.transitions
    record["build_seconds"] = time.perf_counter() - t0
    return model, em


def _cmd_explore(args):
    record = {"model": args.model}
    model, em = _build(args, record)
    layout = em.layout
    record["model_type"] = em.model_type
    record["bytes_per_state"] = len(em.packed[0]) if em.packed else 0
    record["naive_bytes_per_state"] = layout.naive_bytes() if layout else 0
    record["deadlocks_repaired"] = em.deadlocks_repaired
    record["workers"] = args.workers
    record["status"] = "solved"
    _emit(record, args)
    return EXIT_SOLVED


def _cmd_check(args):
    q = parse_query(args.query)
    if args.method is None:
        args.method = q.method
    if args.epsilon is None:
        args.epsilon = q.epsilon
    record = {"model": args.model, "query": args.query}

    def work():
        model, em = _build(args, record, query=q)
        t0 = time.perf_counter()
        code = _solve_query(model, em, q, args, record)
        record["solve_seconds"] = time.perf_counter() - t0
        return code

    code = _run_with_timeout(work, args.timeout, record)
    record["status"] = "solved"
    _emit(record, args)
    return code


def _cmd_rare(args):
    q = parse_query(args.query)
    if q.kind != "rare-estimate":
        raise QueryError("the rare command takes 'rare P=?[F ...]' queries")
    record = {"model": args.model, "query": args.query}

    def work():
        model, em = _build(args, record)
        goal = _goal_mask(em, q.goal)
        t0 = time.perf_counter()
        if args.estimator == "crude":
            est = estimate_crude(
                em, goal, runs=args.runs, seconds=args.seconds,
                conf=args.conf, time_bound=q.time_bound, seed=args.seed,
            )
        else:
            f = derive_importance(em, goal)
            scheme = select_thresholds(
                f, em, goal, args.thresholds, pilot_runs=args.pilot_runs,
                seed=args.seed, time_bound=q.time_bound,
            )
            scheme.effort = args.effort
            est = estimate_splitting(
                em, goal, f, scheme, args.estimator, runs=args.runs,
                seconds=args.seconds, conf=args.conf,
                time_bound=q.time_bound, seed=args.seed,
            )
            record["levels"] = scheme.levels
            record["factors"] = scheme.factors
        record["solve_seconds"] = time.perf_counter() - t0
        record["estimate"] = est.p_hat
        record["delta"] = est.delta
        record["lower"] = est.lower
        record["upper"] = est.upper
        record["confidence"] = est.conf
        record["replications"] = est.replications
        if est.flags:
            record["flags"] = ", ".join(est.flags)
        return EXIT_SOLVED

    code = _run_with_timeout(work, args.timeout, record)
    record["status"] = "solved"
    _emit(record, args)
    return code


def _cmd_bench(args):
    from .bench import run_bench

    records = run_bench(
        args.manifest,
        args.out,
        parallel=args.parallel,
        default_timeout=args.timeout,
        seed=args.seed,
    )
    solved = sum(1 for r in records if r.status == "solved")
    print(f"bench: {solved}/{len(records)} rows solved; output in {args.out}")
    return EXIT_SOLVED


def _cmd_fetch_qvbs(args):
    """The external benchmark set lives on the public internet; in an
    offline environment this command can only report how to supply it."""
    dest = args.dest or os.environ.get("QCHECK_QVBS_DIR", "qvbs")
    url = "https://qcomp.org/benchmarks/"
    try:
        import urllib.request

        with urllib.request.urlopen(url, timeout=10) as resp:
            resp.read(1)
    except Exception as e:
        print(
            f"cannot reach {url}: {e}\n"
            f"Download the benchmark set manually and point "
            f"QCHECK_QVBS_DIR at the directory (expected layout: "
            f"<dir>/<model>/<file>.jani). Target directory: {dest}",
            file=sys.stderr,
        )
        return EXIT_MODEL_ERROR
    print(
        "network reachable, but automated mirroring is not implemented; "
        f"download the models into {dest} and set QCHECK_QVBS_DIR"
    )
    return EXIT_UNSUPPORTED


def _add_model_args(p):
    p.add_argument("model", help="path to a JANI model file")
    p.add_argument("--const", default="", metavar="N=V,...",
                   help="constant overrides, comma separated")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-states", type=int, default=None)


def _add_common_args(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=_parse_timeout, default=None,
                   metavar="DUR", help="e.g. 30s, 2m, 500ms")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--csv", default=None, metavar="PATH",
                   help="also write the result as a one-row CSV")


def build_arg_parser():
    ap = argparse.ArgumentParser(
        prog="qcheck",
        description="explicit-state quantitative verification of JANI models",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explore", help="build and measure the state space")
    _add_model_args(p)
    _add_common_args(p)
    p.set_defaults(fn=_cmd_explore)

    p = sub.add_parser("check", help="evaluate a query")
    _add_model_args(p)
    _add_common_args(p)
    p.add_argument("--query", required=True)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--method", choices=["vi", "ii", "ovi"], default=None)
    p.add_argument("--pomdp-budget", type=int, default=1000,
                   help="belief-node budget for POMDP queries")
    p.add_argument("--truncate-kappa", type=float, default=None,
                   help="CTMC truncation threshold; result becomes a window")
    p.add_argument("--report", default=None, metavar="DIR",
                   help="write figures and delimited data for plotting queries")
    p.set_defaults(fn=_cmd_check)

    p = sub.add_parser("rare", help="statistical rare-event estimation")
    _add_model_args(p)
    _add_common_args(p)
    p.add_argument("--query", required=True)
    p.add_argument("--estimator", choices=["crude", "restart", "fixed-effort"],
                   default="restart")
    p.add_argument("--thresholds", choices=["expected-success", "sequential-mc"],
                   default="expected-success")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--seconds", type=float, default=None)
    p.add_argument("--pilot-runs", type=int, default=1000)
    p.add_argument("--effort", type=int, default=64)
    p.add_argument("--conf", type=float, default=0.95)
    p.set_defaults(fn=_cmd_rare)

    p = sub.add_parser("bench", help="run a benchmark manifest")
    p.add_argument("manifest", help="JSON manifest of benchmark rows")
    p.add_argument("--out", default="bench-out", metavar="DIR")
    p.add_argument("--parallel", type=int, default=1)
    _add_common_args(p)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("fetch-qvbs", help="obtain external benchmark models")
    p.add_argument("--dest", default=None)
    p.set_defaults(fn=_cmd_fetch_qvbs)

    return ap


def main(argv=None):
    ap = build_arg_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except CliTimeout as e:
        partial = {k: v for k, v in e.progress.items() if not k.startswith("_")}
        partial["status"] = "timeout"
        _emit(partial, args)
        return EXIT_TIMEOUT
    except UnsupportedFeatureError as e:
        print(f"unsupported: {e}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except QueryError as e:
        print(f"query error: {e}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except InfiniteRewardError as e:
        # a diverging accumulated reward is an answer, not a failure
        record = {"status": "solved", "value": "inf", "note": str(e)}
        _emit(record, args)
        return EXIT_SOLVED
    except (ModelSyntaxError, ModelTypeError, StateDomainError,
            FileNotFoundError, json.JSONDecodeError) as e:
        print(f"model error: {e}", file=sys.stderr)
        return EXIT_MODEL_ERROR
    except (SolverError, QcheckError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
