import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from landmark_opt.cli import main, resolve_workers
from landmark_opt.io import load_scenario
from landmark_opt.nlp import evaluate_placement

from .conftest import SCENARIOS

DEFAULT = str(SCENARIOS / "default.json")
INFEASIBLE = {
    "version": 1, "num_landmarks": 1, "r_min": 2.9, "r_max": 3.0, "sigma_m": 0.1, "delta": 0,
    "setpoints": [[2, 0, 0], [-2, 0, 0], [0, 2, 0], [0, -2, 0], [0, 0, 2], [0, 0, -2]],
}


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(p)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def no_env(monkeypatch):
    monkeypatch.delenv("LANDMARK_OPT_WORKERS", raising=False)


def test_solve_writes_consistent_outputs(tmp_path, no_env):
    out = tmp_path / "sol.json"
    assert main(["solve", DEFAULT, "--starts", "3", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    sc = load_scenario(DEFAULT).scenario
    check = evaluate_placement(sc, np.array(doc["landmarks"]))
    assert doc["max_cost"] == pytest.approx(check.max_cost, rel=1e-9)
    assert doc["delta_mode"] == "auto"
    assert doc["delta"] == pytest.approx(0.5 * doc["theory"]["delta_max"])
    rows = read_rows(tmp_path / "sol.csv")
    assert sum(r["kind"] == "landmark" for r in rows) == sc.M
    assert [r for r in rows if r["kind"] == "max_cost"][0]["value"] == repr(doc["max_cost"])


@pytest.mark.parametrize("cmd", [["solve", "--starts", "2"], ["greedy"],
                                 ["evolve", "--generations", "5"]])
def test_infeasible_scenarios_exit_2(tmp_path, no_env, cmd):
    path = write(tmp_path, "inf.json", INFEASIBLE)
    assert main([cmd[0], path] + cmd[1:]) == 2


@pytest.mark.parametrize(
    "content",
    [
        '{"version": 1,,}',
        {**INFEASIBLE, "r_min": 5.0},
        {**INFEASIBLE, "sigma_m": "big"},
    ],
)
def test_bad_input_exits_1(tmp_path, no_env, content, capsys):
    path = write(tmp_path, "bad.json", content)
    assert main(["solve", path]) == 1
    assert "input error" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path, no_env):
    assert main(["greedy", str(tmp_path / "absent.json")]) == 1


def test_unreachable_tolerance_exits_3(no_env):
    assert main(["solve", DEFAULT, "--starts", "1", "--kkt-tol", "1e-30"]) == 3


def test_flipped_bound_exits_4(no_env):
    args = ["verify-theory", DEFAULT, "--draws", "50", "--claim-draws", "200", "--skip-corollary"]
    assert main(args) == 0
    assert main(args + ["--flip-bound"]) == 4


def test_evolve_budget_is_respected(tmp_path, no_env):
    out = tmp_path / "evo.json"
    assert main(["evolve", DEFAULT, "--budget", "300", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["evaluations"] <= 300


def test_greedy_grid_spacing(tmp_path, no_env):
    out = tmp_path / "g.json"
    assert main(["greedy", DEFAULT, "--grid-spacing", "3", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["grid_spacing"] == 3.0


def test_simulate_columns_and_none_source(tmp_path, no_env):
    out = tmp_path / "sim.csv"
    assert main(["simulate", str(SCENARIOS / "mission_scenario.json"),
                 str(SCENARIOS / "mission.json"), "--runs", "3", "--starts", "2",
                 "--out", str(out)]) == 0
    rows = read_rows(out)
    assert list(rows[0]) == ["seed", "mode", "drift_total_m", "drift_x", "drift_y", "drift_z",
                             "reduction"]
    assert len(rows) == 9
    assert all(float(r["reduction"]) == 0.0 for r in rows if r["mode"] == "none")


def test_deriv_check(tmp_path, no_env):
    out = tmp_path / "d.csv"
    assert main(["deriv-check", "--points", "3", "--out", str(out)]) == 0
    assert all(r["passed"] == "true" for r in read_rows(out))


@pytest.mark.parametrize("env, flag, expected", [(None, None, 1), (None, 3, 3), ("2", 5, 2)])
def test_env_overrides_workers_flag(monkeypatch, env, flag, expected):
    monkeypatch.delenv("LANDMARK_OPT_WORKERS", raising=False)
    if env is not None:
        monkeypatch.setenv("LANDMARK_OPT_WORKERS", env)
    assert resolve_workers(flag) == expected


@pytest.mark.parametrize("env", ["zero", "0"])
def test_bad_worker_env_exits_1(monkeypatch, env):
    monkeypatch.setenv("LANDMARK_OPT_WORKERS", env)
    assert main(["greedy", DEFAULT]) == 1


def test_solve_csv_identical_across_worker_env(tmp_path, monkeypatch):
    outs = []
    for w in ("1", "3"):
        monkeypatch.setenv("LANDMARK_OPT_WORKERS", w)
        out = tmp_path / f"s{w}.json"
        assert main(["solve", DEFAULT, "--starts", "4", "--out", str(out)]) == 0
        outs.append((tmp_path / f"s{w}.csv").read_bytes())
    assert outs[0] == outs[1]


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "landmark_opt.cli", "--version"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "landmark-opt" in r.stdout
