import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from collapse_lab.cli import EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, main, result_schema

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


# trajectory -------------------------------------------------------------------------------


def test_trajectory_csv_descends(tmp_path):
    assert run(tmp_path, "trajectory", "--config", str(CONFIGS / "two_level.toml")) == EXIT_OK
    header, rows = read_csv(tmp_path / "trajectory.csv")
    assert header == ["t", "b_0", "b_1", "f"]
    assert rows[0, 1:3].tolist() == pytest.approx([0.6, 0.8], abs=1e-15)
    assert np.all(np.diff(rows[:, 3]) <= 0.0)
    assert np.all(np.diff(rows[:, 0]) > 0.0)
    assert rows[-1, 2] >= 1 - 1e-6


def test_trajectory_from_vertex_is_one_row(tmp_path):
    assert run(tmp_path, "trajectory", "--state.bpoint=[0.0, 1.0, 0.0]") == EXIT_OK
    _, rows = read_csv(tmp_path / "trajectory.csv")
    assert rows.shape == (1, 5)


@pytest.mark.parametrize("state", ["--state.simplex=[0.36, 0.64]", "--state.simplex=[0.2, 0.3, 0.5]"])
def test_trajectory_svg(tmp_path, state):
    assert run(tmp_path, "trajectory", state, "--noise.continuous_sigma=0.0", "--svg") == EXIT_OK
    text = (tmp_path / "trajectory.svg").read_text()
    assert text.startswith("<?xml") and "<svg" in text


def test_trajectory_svg_four_levels_is_a_clean_error(tmp_path, capsys):
    code = run(tmp_path, "trajectory", "--state.simplex=[0.1, 0.2, 0.3, 0.4]", "--svg")
    assert code == EXIT_USAGE
    assert "SVG supported for N in {2,3}" in capsys.readouterr().err
    assert not (tmp_path / "trajectory.csv").exists()


def test_svg_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run(tmp_path / d, "trajectory", "--state.simplex=[0.2, 0.3, 0.5]", "--svg") == EXIT_OK
    assert (tmp_path / "a" / "trajectory.svg").read_bytes() == (tmp_path / "b" / "trajectory.svg").read_bytes()


# ensemble -----------------------------------------------------------------------------------


def test_ensemble_json_validates(tmp_path):
    code = run(tmp_path, "ensemble", "--config", str(CONFIGS / "three_level_transverse.toml"), "--run.trials=200",
               "--dynamics.step_size=1e-2")
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "ensemble.json").read_text())
    jsonschema.validate(doc, result_schema())
    assert doc["config"]["transverse"]["kind"] == "tangent_rotation"
    assert doc["config"]["dynamics"]["collapse_eps"] == 1e-6
    assert sum(doc["counts"]) + doc["censored"] + doc["failed"] == 200


def test_ensemble_echoes_phases(tmp_path):
    assert run(tmp_path, "ensemble", "--config", str(CONFIGS / "two_level.toml"), "--run.trials=5") == EXIT_OK
    doc = json.loads((tmp_path / "ensemble.json").read_text())
    assert doc["config"]["state"]["amplitudes"] == [[0.6, 0.0], [0.8, 1.2]]
    assert doc["born"] == pytest.approx([0.36, 0.64])
    assert doc["counts"] == [0, 5]


def test_ensemble_martingale_document(tmp_path):
    code = run(tmp_path, "ensemble", "--config", str(CONFIGS / "martingale_born.toml"), "--run.trials=2000",
               "--dynamics.step_size=1e-2")
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "ensemble.json").read_text())
    jsonschema.validate(doc, result_schema())
    assert "oracle" in doc
    assert doc["ci_low"][0] <= 0.3 <= doc["ci_high"][0]


@pytest.mark.parametrize("threads", ["1", "2", "5"])
def test_ensemble_bytes_independent_of_threads(tmp_path, monkeypatch, threads):
    args = ("ensemble", "--config", str(CONFIGS / "martingale_born.toml"), "--run.trials=3000",
            "--dynamics.step_size=1e-2")
    monkeypatch.setenv("COLLAPSE_LAB_THREADS", "1")
    assert run(tmp_path / "ref", *args) == EXIT_OK
    monkeypatch.setenv("COLLAPSE_LAB_THREADS", threads)
    assert run(tmp_path / "new", *args) == EXIT_OK
    assert (tmp_path / "ref" / "ensemble.json").read_bytes() == (tmp_path / "new" / "ensemble.json").read_bytes()


@pytest.mark.parametrize("override", ["--run.trials=0", "--run.trials=-3"])
def test_ensemble_needs_trials(tmp_path, override):
    assert run(tmp_path, "ensemble", "--config", str(CONFIGS / "two_level.toml"), override) == EXIT_USAGE


@pytest.mark.parametrize("args", [
    ("--run.colour=1",),
    ("--nosection=1",),
    ("--state.simplex=[0.3, 0.7]", "--state.bpoint=[0.6, 0.8]"),
    (),
    ("--state.simplex=[0.3, 0.6]",),
    ("--state.amplitudes=[0.6, 0.8]",),
    ("--state.simplex=[0.3, 0.7]", "--dynamics.step_size=-1"),
    ("--state.simplex=[0.3, 0.7]", "--run.model=\"other\""),
    ("--state.simplex=[0.3, 0.7]", "--config", "/nonexistent/x.toml"),
])
def test_usage_errors(tmp_path, args, capsys):
    assert run(tmp_path, "ensemble", *args) == EXIT_USAGE
    assert capsys.readouterr().err.startswith("collapse-lab: error:")


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["ensemble", "--state.simplex=[0.3, 0.7]", "--out", str(blocker / "sub")]) == EXIT_USAGE


def test_out_is_required(capsys):
    assert main(["ensemble", "--state.simplex=[0.3, 0.7]"]) == EXIT_USAGE


def test_bad_config_key_in_file(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[dynamics]\nstepsize = 0.1\n")
    assert run(tmp_path, "ensemble", "--config", str(cfg)) == EXIT_USAGE


# scan ----------------------------------------------------------------------------------------


def test_scan_outputs(tmp_path):
    code = run(tmp_path, "scan", "--config", str(CONFIGS / "scan_martingale.toml"), "--scan.trials=500",
               "--dynamics.step_size=1e-2", "--svg")
    assert code == EXIT_OK
    header, rows = read_csv(tmp_path / "scan.csv")
    assert header == ["x", "p1_hat", "ci_low", "ci_high", "censored_frac"]
    assert rows[:, 0].tolist() == pytest.approx([0.1 * k for k in range(1, 10)])
    assert np.all((rows[:, 2] <= rows[:, 1]) & (rows[:, 1] <= rows[:, 3]))
    header, sym = read_csv(tmp_path / "scan_symmetry.csv")
    assert header == ["x", "partner", "residual", "bound", "within"] and len(sym) == 5
    doc = json.loads((tmp_path / "scan.json").read_text())
    assert set(doc["linear_fit"]) >= {"slope", "intercept", "max_born_deviation"}
    assert (tmp_path / "scan.svg").exists()


def test_gradient_flow_scan_reports(tmp_path):
    code = run(tmp_path, "scan", "--config", str(CONFIGS / "scan_gradient_flow.toml"), "--scan.trials=100",
               "--scan.grid=[0.3, 0.5, 0.7]")
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "scan.json").read_text())
    assert doc["linear_fit"]["max_born_deviation"] >= 0.0


@pytest.mark.parametrize("grid", ["[0.1, 0.2, 0.8]", "[0.0, 1.0]", "[0.5, 0.5]"])
def test_scan_bad_grid(tmp_path, grid):
    assert run(tmp_path, "scan", f"--scan.grid={grid}") == EXIT_USAGE


def test_scan_is_reproducible(tmp_path):
    args = ("scan", "--config", str(CONFIGS / "scan_gradient_flow.toml"), "--scan.trials=50",
            "--scan.grid=[0.4, 0.6]")
    for d in ("a", "b"):
        assert run(tmp_path / d, *args) == EXIT_OK
    for name in ("scan.csv", "scan_symmetry.csv", "scan.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# self checks ---------------------------------------------------------------------------------


def test_gradcheck_passes(tmp_path, capsys):
    assert main(["gradcheck", "--gradcheck.samples=200", "--out", str(tmp_path)]) == EXIT_OK
    assert "gradcheck PASS" in capsys.readouterr().out
    assert json.loads((tmp_path / "gradcheck.json").read_text())["passed"] is True


def test_gradcheck_fails_with_impossible_tolerance():
    assert main(["gradcheck", "--gradcheck.samples=50", "--gradcheck.tolerance=1e-30"]) == EXIT_CHECK_FAILED


def test_martingale_check_passes(tmp_path, capsys):
    code = main(["martingale-check", "--martingale_check.trials=2000", "--martingale_check.step_size=1e-2",
                 "--martingale_check.drift_samples=20000", "--out", str(tmp_path)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "drift PASS" in out and "absorption PASS" in out and "clamping PASS" in out
    assert json.loads((tmp_path / "martingale_check.json").read_text())["passed"] is True


def test_martingale_check_fails_when_runs_are_censored():
    # too short a horizon censors most runs
    code = main(["martingale-check", "--martingale_check.trials=500", "--martingale_check.t_max=0.5",
                 "--martingale_check.drift_samples=1000"])
    assert code == EXIT_CHECK_FAILED


def test_console_script_runs(tmp_path):
    env = {**os.environ, "COLLAPSE_LAB_THREADS": "2"}
    proc = subprocess.run(
        [sys.executable, "-m", "collapse_lab.cli", "trajectory", "--config", str(CONFIGS / "two_level.toml"),
         "--out", str(tmp_path)],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0, proc.stderr
    assert "collapsed at vertex 1" in proc.stdout
