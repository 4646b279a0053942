"""Benchmark harness: runs a manifest of (model, constants, query, method)
rows and emits per-row records plus the two derived data files used for
plotting — a quantile curve (rank vs. seconds per configuration) and a
states-vs-seconds scatter. Matching figures are rendered next to the CSVs.
"""

from __future__ import annotations

import argparse
import json
import os
import time
import tracemalloc
import warnings
from concurrent.futures import ThreadPoolExecutor
from csv import writer as csv_writer
from dataclasses import dataclass, field

from .errors import QcheckError, UnsupportedFeatureError

RECORDS_COLUMNS = [
    "id", "model", "instance", "query", "method", "status",
    "value", "lower", "upper",
    "states", "transitions", "build_seconds", "solve_seconds",
    "peak_memory_bytes",
]
QUANTILE_COLUMNS = ["configuration", "rank", "seconds"]
SCATTER_COLUMNS = ["configuration", "states", "seconds"]


@dataclass
class BenchRecord:
    model: str
    instance: str  # constant bindings, "N=2,K=5" style
    query: str
    method: str
    status: str  # solved | unsupported | timeout | error
    row_id: str = ""
    value: float | str | None = None
    lower: float | None = None
    upper: float | None = None
    states: int | None = None
    transitions: int | None = None
    build_seconds: float | None = None
    solve_seconds: float | None = None
    peak_memory_bytes: int | None = None
    detail: str = ""

    def configuration(self):
        return self.method or "default"


def _instance_string(constants):
    return ",".join(f"{k}={v}" for k, v in sorted((constants or {}).items()))


def _run_row(row, default_timeout, seed):
    """Execute one manifest row in-process; never raises."""
    from . import cli

    model_path = row.get("model", "")
    constants = row.get("constants", {})
    query_text = row.get("query", "")
    method = row.get("method", "ii")
    timeout = row.get("timeout", default_timeout)
    rec = BenchRecord(
        model=model_path,
        instance=_instance_string(constants),
        query=query_text,
        method=method,
        status="error",
        row_id=str(row.get("id", "")),
    )

    args = argparse.Namespace(
        model=model_path,
        const=_instance_string(constants),
        workers=int(row.get("workers", 1)),
        max_states=row.get("max_states"),
        epsilon=None,
        method=method,
        seed=seed,
        timeout=None,
        pomdp_budget=int(row.get("pomdp_budget", 1000)),
        truncate_kappa=row.get("truncate_kappa"),
        report=None,
    )

    progress = {"model": model_path, "query": query_text}
    tracemalloc.start()
    try:
        q = cli.parse_query(query_text)
        if args.epsilon is None:
            args.epsilon = q.epsilon

        def work():
            model, em = cli._build(args, progress, query=q)
            t0 = time.perf_counter()
            cli._solve_query(model, em, q, args, progress)
            progress["solve_seconds"] = time.perf_counter() - t0

        cli._run_with_timeout(work, timeout, progress)
        rec.status = "solved"
    except cli.CliTimeout:
        rec.status = "timeout"
    except (UnsupportedFeatureError, cli.QueryError) as e:
        rec.status = "unsupported"
        rec.detail = str(e)
    except (QcheckError, OSError, ValueError, json.JSONDecodeError) as e:
        rec.status = "error"
        rec.detail = str(e)
    finally:
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()

    rec.peak_memory_bytes = int(peak)
    rec.states = progress.get("states")
    rec.transitions = progress.get("transitions")
    rec.build_seconds = progress.get("build_seconds")
    rec.solve_seconds = progress.get("solve_seconds")
    if rec.status == "solved":
        rec.value = progress.get("value")
        rec.lower = progress.get("lower")
        rec.upper = progress.get("upper")
    return rec


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def write_records_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv_writer(fh)
        w.writerow(RECORDS_COLUMNS)
        for r in records:
            w.writerow([
                r.row_id, r.model, r.instance, r.query, r.method, r.status,
                _fmt(r.value), _fmt(r.lower), _fmt(r.upper),
                _fmt(r.states), _fmt(r.transitions),
                _fmt(r.build_seconds), _fmt(r.solve_seconds),
                _fmt(r.peak_memory_bytes),
            ])


def quantile_rows(records):
    """Per configuration: solved rows ranked by total seconds ascending.

    The k-th row says: k benchmarks finished within that many seconds.
    """
    rows = []
    configs = sorted({r.configuration() for r in records})
    for cfg in configs:
        times = sorted(
            (r.build_seconds or 0.0) + (r.solve_seconds or 0.0)
            for r in records
            if r.configuration() == cfg and r.status == "solved"
        )
        for rank, seconds in enumerate(times, start=1):
            rows.append((cfg, rank, seconds))
    return rows


def scatter_rows(records):
    return [
        (r.configuration(), r.states,
         (r.build_seconds or 0.0) + (r.solve_seconds or 0.0))
        for r in records
        if r.status == "solved" and r.states is not None
    ]


def write_quantile_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv_writer(fh)
        w.writerow(QUANTILE_COLUMNS)
        for cfg, rank, seconds in quantile_rows(records):
            w.writerow([cfg, rank, f"{seconds:.9g}"])


def write_scatter_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv_writer(fh)
        w.writerow(SCATTER_COLUMNS)
        for cfg, states, seconds in scatter_rows(records):
            w.writerow([cfg, states, f"{seconds:.9g}"])


def render_figures(out_dir, records):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_cfg = {}
    for cfg, rank, seconds in quantile_rows(records):
        by_cfg.setdefault(cfg, []).append((rank, seconds))
    fig, ax = plt.subplots(figsize=(6, 4))
    for cfg, pts in sorted(by_cfg.items()):
        ranks = [p[0] for p in pts]
        secs = [p[1] for p in pts]
        ax.step(secs, ranks, where="post", label=cfg)
    ax.set_xlabel("seconds")
    ax.set_ylabel("benchmarks solved")
    ax.set_title("solved within time budget")
    if by_cfg:
        ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "quantile.png"), dpi=150)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    by_cfg = {}
    for cfg, states, seconds in scatter_rows(records):
        by_cfg.setdefault(cfg, []).append((states, seconds))
    for cfg, pts in sorted(by_cfg.items()):
        ax.scatter([p[0] for p in pts], [p[1] for p in pts], label=cfg, s=18)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("states")
    ax.set_ylabel("seconds")
    ax.set_title("model size vs. total time")
    if by_cfg:
        ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "scatter.png"), dpi=150)
    plt.close(fig)


def run_bench(manifest_path, out_dir, parallel=1, default_timeout=None, seed=0):
    """Run every manifest row, write records.csv, quantile.csv, scatter.csv
    and the matching figures into out_dir; row failures become records.
    """
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if isinstance(manifest, dict):
        manifest = manifest.get("rows", [])
    base = os.path.dirname(os.path.abspath(manifest_path))
    for row in manifest:
        p = row.get("model", "")
        if p and not os.path.isabs(p):
            row["model"] = os.path.join(base, p)

    if parallel > 1:
        warnings.warn(
            "parallel benchmark rows share the interpreter: timings lose "
            "comparability with sequential runs"
        )
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            records = list(
                pool.map(lambda r: _run_row(r, default_timeout, seed), manifest)
            )
    else:
        records = [_run_row(row, default_timeout, seed) for row in manifest]

    os.makedirs(out_dir, exist_ok=True)
    write_records_csv(os.path.join(out_dir, "records.csv"), records)
    write_quantile_csv(os.path.join(out_dir, "quantile.csv"), records)
    write_scatter_csv(os.path.join(out_dir, "scatter.csv"), records)
    render_figures(out_dir, records)
    return records
