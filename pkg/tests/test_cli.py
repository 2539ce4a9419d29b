import json

import pandas as pd
import pytest

from mindisp import diagnostics
from mindisp.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main

RUN = """
[model]
name = linear
sigma = 0.3
initial_state = 1.0

[cost]
kind = squared_distance

[grid]
horizon = 0.5
knots_per_unit_time = 10
substeps_per_knot = 2

[descent]
n_paths = 20
n_particles = 2
n_eval = 50
max_iters = 2
seed = 4

[output]
plot_paths = 5
"""

DIAGNOSE = """
[grid]
knots_per_unit_time = 10
substeps_per_knot = 2

[diagnostics]
horizon = 1.0
n_paths = 400
duality_paths = 50
n_particles = 20
increment_paths = 20
increment_particles = 20
sigmas = {sigmas}
"""

ARTIFACTS = ("cost_trace.csv", "control.csv", "paths_initial.csv", "paths_learned.csv", "report.json")


@pytest.fixture
def run_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(RUN)
    return str(path)


def test_run_writes_artifacts(run_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", run_file, "--out", str(out)]) == EXIT_OK
    for name in ARTIFACTS + ("timing.json",):
        assert (out / name).exists()
    for name in ARTIFACTS[:4]:
        assert (out / name).read_text().startswith("# mindisp experiment seed=4\n# config=")
    paths = pd.read_csv(out / "paths_learned.csv", comment="#")
    assert list(paths.columns) == ["time", "particle", "x_0"]
    assert len(paths) == 5 * 11
    report = json.loads((out / "report.json").read_text())
    trace = pd.read_csv(out / "cost_trace.csv", comment="#")
    assert len(trace) == report["n_iterations"] + 1
    err = capsys.readouterr().err
    assert err.count("PROGRESS iteration=") == len(trace)
    assert "[INFO]" in err


def test_run_is_independent_of_thread_count(run_file, tmp_path):
    one, three = tmp_path / "one", tmp_path / "three"
    assert main(["run", run_file, "--out", str(one), "--threads", "1"]) == EXIT_OK
    assert main(["run", run_file, "--out", str(three), "--threads", "3"]) == EXIT_OK
    for name in ARTIFACTS:
        assert (one / name).read_bytes() == (three / name).read_bytes()


def test_seed_override_changes_results(run_file, tmp_path):
    assert main(["run", run_file, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", run_file, "--out", str(tmp_path / "b"), "--seed", "5"]) == EXIT_OK
    assert json.loads((tmp_path / "b" / "report.json").read_text())["seed"] == 5
    first = pd.read_csv(tmp_path / "a" / "cost_trace.csv", comment="#")
    second = pd.read_csv(tmp_path / "b" / "cost_trace.csv", comment="#")
    assert first["cost"].iloc[0] != second["cost"].iloc[0]


def test_dry_run_writes_nothing(run_file, tmp_path, capsys):
    out = tmp_path / "dry"
    assert main(["run", run_file, "--out", str(out), "--dry-run"]) == EXIT_OK
    assert not out.exists()
    echo = json.loads(capsys.readouterr().out)
    assert echo["descent"]["n_paths"] == 20
    assert echo["model"]["name"] == "linear"


def test_invalid_inputs_exit_with_config_status(run_file, tmp_path):
    assert main(["run", str(tmp_path / "absent.ini")]) == EXIT_CONFIG
    assert main(["run", run_file, "--threads", "-1"]) == EXIT_CONFIG
    bad = tmp_path / "bad.ini"
    bad.write_text("[descent]\nn_paths = 0\n")
    assert main(["diagnose", str(bad), "--out", str(tmp_path / "never")]) == EXIT_CONFIG
    assert not (tmp_path / "never").exists()


def test_unknown_subcommand_is_rejected():
    with pytest.raises(SystemExit):
        main(["optimize", "x.ini"])


def test_diagnose_passes(tmp_path):
    path = tmp_path / "diagnose.ini"
    path.write_text(DIAGNOSE.format(sigmas=50))
    out = tmp_path / "diag"
    assert main(["diagnose", str(path), "--out", str(out)]) == EXIT_OK
    payload = json.loads((out / "diagnostics.json").read_text())
    assert payload["passed"]
    names = [c["name"] for c in payload["checks"]]
    assert "feynman_kac_value" in names and "increment_formula" in names and "argmin_optimality" in names


def test_diagnose_with_zero_tolerance_fails(tmp_path):
    path = tmp_path / "diagnose.ini"
    path.write_text(DIAGNOSE.format(sigmas=0))
    out = tmp_path / "diag"
    assert main(["diagnose", str(path), "--out", str(out)]) == EXIT_FAILURE
    payload = json.loads((out / "diagnostics.json").read_text())
    assert not payload["passed"]
    exact = {c["name"]: c["passed"] for c in payload["checks"]}
    assert exact["duality_frozen"] and exact["trace_covariance_identity"] and exact["argmin_optimality"]


def test_diagnose_results_do_not_depend_on_threads(tmp_path):
    path = tmp_path / "diagnose.ini"
    path.write_text(DIAGNOSE.format(sigmas=50))
    one, two = tmp_path / "one", tmp_path / "two"
    assert main(["diagnose", str(path), "--out", str(one), "--threads", "1"]) == EXIT_OK
    assert main(["diagnose", str(path), "--out", str(two), "--threads", "2"]) == EXIT_OK
    assert (one / "diagnostics.json").read_bytes() == (two / "diagnostics.json").read_bytes()


def test_diagnose_forwards_threads_to_the_increment_check(tmp_path, monkeypatch):
    seen = []
    original = diagnostics.increment_check

    def spy(*args, **kwargs):
        seen.append(kwargs.get("threads"))
        return original(*args, **kwargs)

    monkeypatch.setattr(diagnostics, "increment_check", spy)
    path = tmp_path / "diagnose.ini"
    path.write_text(DIAGNOSE.format(sigmas=50))
    assert main(["diagnose", str(path), "--out", str(tmp_path / "diag"), "--threads", "3"]) == EXIT_OK
    assert seen == [3]
