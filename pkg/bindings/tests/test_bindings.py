import glob
import json
import os
import subprocess
import sys
import threading

import pytest

import qcheck_bindings
from qcheck_bindings import load

QVBS_DIR = os.environ.get("QCHECK_QVBS_DIR")

MODELS = os.path.abspath(
    os.path.join(os.path.dirname(__file__), os.pardir, os.pardir, "models")
)


def model_path(name):
    return os.path.join(MODELS, name)


def _cli_explore(path, const=""):
    args = [sys.executable, "-m", "qcheck", "explore", path, "--json"]
    if const:
        args += ["--const", const]
    proc = subprocess.run(args, capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    return json.loads(proc.stdout)


def test_version_mirrors_engine():
    import qcheck

    assert qcheck_bindings.__version__ == qcheck.__version__


# --- parity with the engine's own exploration -------------------------------


def test_coin_counts_match_cli():
    bm = load(model_path("coin.jani"), constants={"K": 5})
    stats = bm.explore()
    ref = _cli_explore(model_path("coin.jani"), "K=5")
    assert stats["states"] == ref["states"] == 656
    assert stats["transitions"] == ref["transitions"]


def test_consensus_counts_match_cli():
    bm = load(model_path("consensus4.jani"), constants={"K": 10})
    stats = bm.explore()
    ref = _cli_explore(model_path("consensus4.jani"), "K=10")
    assert stats["states"] == ref["states"] == 104576
    assert stats["transitions"] == ref["transitions"]


@pytest.mark.skipif(not QVBS_DIR, reason="set QCHECK_QVBS_DIR for this model")
def test_csma_counts_match_cli():
    hits = sorted(glob.glob(
        os.path.join(QVBS_DIR, "csma", "**", "*cs_nfail*.jani"),
        recursive=True,
    ))
    if not hits:
        pytest.skip("no cs_nfail JANI file under QCHECK_QVBS_DIR/csma")
    bm = load(hits[0])
    stats = bm.explore()
    ref = _cli_explore(hits[0])
    assert stats["states"] == ref["states"] == 184


# --- stepping and inspection --------------------------------------------------


def test_initial_and_successors_are_plain_dicts():
    bm = load(model_path("die.jani"))
    init = bm.initial_state()
    assert init == {"s": 0, "d": 0}
    succ = bm.successors(init)
    assert len(succ) == 1
    branches = succ[0]["branches"]
    assert len(branches) == 2
    assert abs(sum(b["probability"] for b in branches) - 1.0) <= 1e-12
    for b in branches:
        assert set(b["state"]) == {"s", "d"}


def test_successors_reject_bad_state():
    bm = load(model_path("die.jani"))
    with pytest.raises(ValueError, match="variables"):
        bm.successors({"s": 0})
    with pytest.raises(ValueError, match="variables"):
        bm.successors({"s": 0, "d": 0, "zzz": 1})


def test_sample_step_deterministic_per_seed():
    bm = load(model_path("die.jani"))
    init = bm.initial_state()
    a = bm.sample_step(init, seed=42)
    b = bm.sample_step(init, seed=42)
    assert a == b
    results = {bm.sample_step(init, seed=s)[1]["s"] for s in range(20)}
    assert len(results) == 2  # both coin outcomes appear across seeds


def test_sample_step_ctmc_sojourn():
    bm = load(model_path("erlang3.jani"))
    action, state, dt = bm.sample_step(bm.initial_state(), seed=1)
    assert dt > 0
    assert state["stage"] == 1


def test_labels():
    bm = load(model_path("die.jani"))
    out = bm.labels({"six": "d=6", "rolled": "s=7"})
    assert len(out["six"]) == 1
    assert len(out["rolled"]) == 6
    assert set(out["six"]) <= set(out["rolled"])


def test_interval_weights_surface_as_bounds():
    bm = load(model_path("interval_chain.jani"))
    succ = bm.successors(bm.initial_state())
    b = succ[0]["branches"][0]
    assert "lower" in b and "upper" in b and "probability" not in b
    assert b["lower"] <= b["upper"]


# --- error passthrough --------------------------------------------------------


def test_malformed_file_raises_with_position(tmp_path):
    bad = tmp_path / "bad.jani"
    bad.write_text("{ not json")
    from qcheck import ModelSyntaxError

    with pytest.raises(ModelSyntaxError):
        load(str(bad))


def test_unsupported_feature_is_named(tmp_path):
    doc = {
        "jani-version": 1, "name": "t", "type": "pta",
        "automata": [], "system": {"elements": []},
    }
    f = tmp_path / "t.jani"
    f.write_text(json.dumps(doc))
    with pytest.raises(Exception, match="pta"):
        load(str(f))


# --- handle semantics ----------------------------------------------------------


def test_closed_handle_rejected():
    bm = load(model_path("die.jani"))
    bm.close()
    with pytest.raises(ValueError, match="closed"):
        bm.explore()


def test_concurrent_calls_on_one_handle_serialize():
    bm = load(model_path("coin.jani"), constants={"K": 2})
    results = []

    def work():
        results.append(bm.explore()["states"])

    threads = [threading.Thread(target=work) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == [results[0]] * 4


def test_distinct_handles_are_independent():
    out = {}

    def work(name, path, const):
        out[name] = load(path, constants=const).explore()["states"]

    threads = [
        threading.Thread(
            target=work, args=("coin", model_path("coin.jani"), {"K": 5})
        ),
        threading.Thread(target=work, args=("ij", model_path("ij10.jani"), {})),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert out == {"coin": 656, "ij": 1023}
