import json
from pathlib import Path

import pytest

from insitu.artifacts import read_csv
from insitu.cli import main

TRACE_SPEC = """
kind = "fidelity_trace"

[system]
n = 3
topology = "chain"
coupling = "ising"

[pulse]
t_gate = "pi"
n_ts = 12

[optimizer]
f_targ = 0.99
"""


@pytest.fixture
def spec_file(tmp_path):
    p = tmp_path / "trace.spec"
    p.write_text(TRACE_SPEC)
    return p


def test_trace_schema(spec_file, tmp_path):
    out = tmp_path / "o"
    assert main(["trace", "--spec", str(spec_file), "--out", str(out), "--seed", "2"]) == 0
    meta, cols, rows = read_csv(out / "trace.csv")
    assert cols == ["iteration", "f_le_measured", "f_le_exact", "f_exact"]
    assert meta["seed"] == 2 and meta["spec"]["harness"]["seed"] == 2
    assert meta["timestamp"] is not None
    assert rows[-1]["f_le_exact"] >= 0.99


def test_json_format(spec_file, tmp_path):
    out = tmp_path / "o"
    assert main(["trace", "--spec", str(spec_file), "--out", str(out), "--format", "json"]) == 0
    data = json.loads((out / "trace.json").read_text())
    assert data["columns"][0] == "iteration" and data["metadata"]["command"] == "trace"


def test_cost_command(tmp_path):
    p = tmp_path / "cost.spec"
    p.write_text(TRACE_SPEC + "a_num = 0.01\n[cost]\nn_upds = 10\np_succ = 0.5\n")
    assert main(["cost", "--spec", str(p), "--out", str(tmp_path / "c"), "--no-timestamp"]) == 0
    summary = json.loads((tmp_path / "c" / "cost_summary.json").read_text())["summary"]
    assert summary["n_prec"] == 10_000
    assert summary["n_meas"] == 16
    _, _, rows = read_csv(tmp_path / "c" / "cost.csv")
    assert {r["symbol"]: r["value"] for r in rows}["n_runs"] == 16 * 10_000 * 10


def test_cost_measures_missing_counts(spec_file, tmp_path):
    p = tmp_path / "cost.spec"
    p.write_text(TRACE_SPEC + "[harness]\ntrials = 2\n")
    assert main(["cost", "--spec", str(p), "--out", str(tmp_path / "c")]) == 0
    summary = json.loads((tmp_path / "c" / "cost_summary.json").read_text())["summary"]
    assert summary["measured_p_succ"] == 1.0


def test_spec_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.spec"
    p.write_text(TRACE_SPEC.replace("[optimizer]", "[optimzer]"))
    assert main(["trace", "--spec", str(p), "--out", str(tmp_path)]) == 2
    assert "optimizer.f_targ" in capsys.readouterr().err


def test_missing_spec_file(tmp_path):
    assert main(["trace", "--spec", str(tmp_path / "nope.spec")]) == 2


def test_usage_error_exit_code():
    assert main(["frobnicate"]) == 2


def test_run_failure_exit_code(tmp_path):
    p = tmp_path / "hard.spec"
    p.write_text(TRACE_SPEC.replace("f_targ = 0.99", "f_targ = 0.99\nmax_upds = 1"))
    assert main(["psucc", "--spec", str(p), "--out", str(tmp_path / "o")]) == 1


def test_anum_threshold_out_of_range_fails(tmp_path):
    p = tmp_path / "a.spec"
    p.write_text(TRACE_SPEC + "max_upds = 200\n[harness]\ntrials = 2\nanum_grid = [0.3, 0.5]\n")
    assert main(["anum-threshold", "--spec", str(p), "--out", str(tmp_path / "o")]) == 1


def test_perturb_and_plot(tmp_path):
    p = tmp_path / "p.spec"
    p.write_text(TRACE_SPEC.replace("fidelity_trace", "perturbation") + "[harness]\nn_values = [3, 4]\nsamples = 5\n")
    out = tmp_path / "o"
    assert main(["perturb", "--spec", str(p), "--out", str(out)]) == 0
    assert main(["plot", "--out", str(out)]) == 0
    svg = (out / "perturb.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_plot_without_inputs_fails(tmp_path):
    assert main(["plot", "--out", str(tmp_path)]) == 1


def test_workers_env_fallback(spec_file, tmp_path, monkeypatch):
    monkeypatch.setenv("INSITU_WORKERS", "2")
    p = tmp_path / "s.spec"
    p.write_text(TRACE_SPEC + "[harness]\ntrials = 2\n")
    assert main(["psucc", "--spec", str(p), "--out", str(tmp_path / "a"), "--no-timestamp"]) == 0
    monkeypatch.setenv("INSITU_WORKERS", "1")
    assert main(["psucc", "--spec", str(p), "--out", str(tmp_path / "b"), "--no-timestamp"]) == 0
    for name in ("psucc.csv", "psucc_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_no_partial_files_left(spec_file, tmp_path):
    out = tmp_path / "o"
    main(["trace", "--spec", str(spec_file), "--out", str(out)])
    assert not [f for f in Path(out).iterdir() if f.name.startswith(".")]
