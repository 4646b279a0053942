import csv
import json
import os

import pytest

from qcheck.bench import (
    QUANTILE_COLUMNS,
    RECORDS_COLUMNS,
    SCATTER_COLUMNS,
    BenchRecord,
    quantile_rows,
    run_bench,
)

from conftest import model_path


@pytest.fixture(scope="module")
def bench_out(tmp_path_factory):
    manifest = {
        "rows": [
            {"id": "die-p", "model": "die.jani", "query": "P=?[F d=6]"},
            {"id": "die-r", "model": "die.jani", "query": "Rmax=?[F s=7]",
             "method": "ii"},
            {"id": "bad", "model": "missing.jani", "query": "P=?[F x]"},
            {"id": "coin-p", "model": "coin.jani",
             "constants": {"K": 2}, "query": "Pmax=?[F counter=0]"},
        ]
    }
    out = tmp_path_factory.mktemp("bench")
    mpath = out / "manifest.json"
    # model paths resolve relative to the manifest's directory
    manifest["rows"] = [
        {**row, "model": model_path(row["model"])
         if row["id"] != "bad" else row["model"]}
        for row in manifest["rows"]
    ]
    mpath.write_text(json.dumps(manifest))
    records = run_bench(str(mpath), str(out))
    return out, records


def test_suite_survives_a_bad_row(bench_out):
    out, records = bench_out
    by_id = {r.row_id: r for r in records}
    assert len(records) == 4
    assert by_id["bad"].status == "error"
    assert by_id["die-p"].status == "solved"
    assert abs(float(by_id["die-p"].value) - 1 / 6) < 2e-6
    assert abs(float(by_id["die-r"].value) - 11 / 3) < 2e-6


def test_records_csv_schema(bench_out):
    out, _ = bench_out
    with open(out / "records.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == RECORDS_COLUMNS
    assert len(rows) == 5
    solved = [r for r in rows[1:] if r[RECORDS_COLUMNS.index("status")] == "solved"]
    for r in solved:
        assert float(r[RECORDS_COLUMNS.index("build_seconds")]) >= 0
        assert int(r[RECORDS_COLUMNS.index("peak_memory_bytes")]) > 0


def test_quantile_csv_schema(bench_out):
    out, _ = bench_out
    with open(out / "quantile.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == QUANTILE_COLUMNS
    # per configuration: ranks count up from 1 and times never decrease
    seen = {}
    for cfg, rank, seconds in rows[1:]:
        rank, seconds = int(rank), float(seconds)
        prev = seen.get(cfg)
        if prev is None:
            assert rank == 1
        else:
            assert rank == prev[0] + 1
            assert seconds >= prev[1]
        seen[cfg] = (rank, seconds)


def test_scatter_csv_schema(bench_out):
    out, _ = bench_out
    with open(out / "scatter.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == SCATTER_COLUMNS
    assert len(rows) == 4  # solved rows only
    for _, states, seconds in rows[1:]:
        assert int(states) > 0 and float(seconds) >= 0


def test_figures_rendered(bench_out):
    out, _ = bench_out
    assert (out / "quantile.png").stat().st_size > 0
    assert (out / "scatter.png").stat().st_size > 0


def test_instance_recorded(bench_out):
    out, records = bench_out
    by_id = {r.row_id: r for r in records}
    assert by_id["coin-p"].instance == "K=2"


def test_quantile_rows_rank_by_time():
    recs = [
        BenchRecord("m", "", "q", "ii", "solved",
                    build_seconds=0.3, solve_seconds=0.2, row_id="a"),
        BenchRecord("m", "", "q", "ii", "solved",
                    build_seconds=0.05, solve_seconds=0.05, row_id="b"),
        BenchRecord("m", "", "q", "ii", "error", row_id="c"),
        BenchRecord("m", "", "q", "ovi", "solved",
                    build_seconds=1.0, solve_seconds=0.0, row_id="d"),
    ]
    rows = quantile_rows(recs)
    assert rows == [
        ("ii", 1, pytest.approx(0.1)),
        ("ii", 2, pytest.approx(0.5)),
        ("ovi", 1, pytest.approx(1.0)),
    ]


def test_parallel_run_agrees(tmp_path):
    manifest = {"rows": [
        {"id": "a", "model": model_path("die.jani"), "query": "P=?[F d=6]"},
        {"id": "b", "model": model_path("die.jani"), "query": "Rmax=?[F s=7]"},
    ]}
    mpath = tmp_path / "m.json"
    mpath.write_text(json.dumps(manifest))
    with pytest.warns(UserWarning, match="timing"):
        records = run_bench(str(mpath), str(tmp_path), parallel=2)
    assert sorted(r.status for r in records) == ["solved", "solved"]
