from __future__ import annotations

import json
import shlex

import pytest

from tugwar import cli, scenarios
from tugwar.game import GameError


PATH4 = {"states": [0, 1, 2, 3, 4], "edges": [[0, 1], [1, 2], [2, 3], [3, 4]],
         "terminals": [0, 4], "F": {"0": 0.0, "4": 1.0}}


@pytest.fixture
def path4(tmp_path):
    p = tmp_path / "path4.json"
    p.write_text(json.dumps(PATH4))
    return p


def _body(text: str) -> str:
    return "".join(line + "\n" for line in text.splitlines() if not line.startswith("#"))


def test_registry_names():
    assert list(scenarios.REGISTRY) == ["triangle", "z2_strip", "pullup_square", "comb", "l_shape",
                                        "disk_cap", "cantor_porous"]


def test_scenario_spec_round_trip():
    for spec in scenarios.REGISTRY.values():
        again = scenarios.ScenarioSpec.from_json(json.loads(spec.dumps()))
        assert again == spec


def test_scenario_spec_rejects_unknown_fields():
    doc = scenarios.REGISTRY["triangle"].to_json()
    doc["colour"] = "red"
    with pytest.raises(GameError):
        scenarios.ScenarioSpec.from_json(doc)
    with pytest.raises(GameError):
        scenarios.ScenarioSpec("x", {"graph": {}, "space": {}})


def test_scenario_list(capsys):
    assert cli.main(["scenario", "list"]) == 0
    assert capsys.readouterr().out.split() == list(scenarios.REGISTRY)


def test_list_command(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    assert "backtracking" in out and "l_shape" in out


def test_solve_path_csv(path4, tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["solve", "--graph", str(path4), "--out", str(out)]) == 0
    text = (out / "field.csv").read_text()
    assert text.startswith("# invocation: tugwar solve")
    assert "# residual_sup:" in text and "# versions:" in text
    rows = _body(text).splitlines()
    assert rows[0] == "state_index,value"
    assert [float(r.split(",")[1]) for r in rows[1:]] == [0.0, 0.25, 0.5, 0.75, 1.0]
    report = json.loads((out / "report.json").read_text())
    assert report["converged"] and report["residual_sup"] <= 1e-12


def test_replay_reproduces_csv_bodies(path4, tmp_path):
    out = tmp_path / "o"
    argv = ["simulate", "--graph", str(path4), "--sI", "greedy_max", "--sII", "uniform_random",
            "--x0", "2", "--trials", "50", "--seed", "3", "--dump", "--out", str(out)]
    assert cli.main(argv) == 0
    first = (out / "trajectory.csv").read_text()
    recorded = first.splitlines()[0].removeprefix("# invocation: tugwar ")
    assert cli.main(shlex.split(recorded)) == 0
    assert _body((out / "trajectory.csv").read_text()) == _body(first)


def test_triangle_scenario_report(tmp_path, capsys):
    assert cli.main(["scenario", "triangle", "--out", str(tmp_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["u_I"] == pytest.approx([-2.0, 0.0], abs=1e-6)
    assert doc["u_II"] == pytest.approx([0.0, 2.0], abs=1e-6)


def test_z2_scenario_exact_zero_laplacian(tmp_path, capsys):
    assert cli.main(["scenario", "z2_strip", "--out", str(tmp_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["interior_max_abs_laplacian"] == 0


def test_l_shape_scenario_flags_audit(capsys):
    assert cli.main(["scenario", "l_shape"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["audit"]["passed"] is False


def test_input_errors(tmp_path, path4, capsys):
    assert cli.main(["scenario", "no_such_thing"]) == 4
    assert cli.main(["solve", "--graph", str(tmp_path / "missing.json")]) == 4
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**PATH4, "terminals": []}))
    assert cli.main(["solve", "--graph", str(bad)]) == 4
    assert cli.main(["solve"]) == 4
    assert cli.main(["simulate", "--graph", str(path4), "--sI", "telepathy", "--sII", "greedy_min",
                     "--x0", "1"]) == 4
    assert cli.main(["solve", "--graph", str(path4), "--threads", "0"]) == 4


def test_nonconvergence_exit_code(path4, capsys):
    assert cli.main(["solve", "--graph", str(path4), "--method", "iterate_below", "--max-iter", "2",
                     "--tol", "1e-14"]) == 2


def test_invariant_violation_exit_code(monkeypatch, capsys):
    def broken(spec, ctx):
        return scenarios.ScenarioResult({}, {}, True, False)
    monkeypatch.setitem(scenarios.RUNNERS, "triangle", broken)
    assert cli.main(["scenario", "triangle"]) == 3


def test_hmeasure_command(tmp_path, capsys):
    argv = ["hmeasure", "--deltas", "0.1,0.4,0.2", "--spacing", "0.04", "--eps", "0.16", "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["deltas"] == [0.1, 0.4, 0.2]
    assert _body((tmp_path / "hmeasure.csv").read_text()).startswith("delta,u0,residual\n")


def test_threads_env(monkeypatch, path4, capsys):
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    assert cli.main(["solve", "--graph", str(path4), "--mode", "jacobi", "--method", "iterate_below"]) == 0


def test_converge_command(tmp_path, capsys):
    assert cli.main(["converge", "--ladder", "0.2,0.1", "--exact", "--out", str(tmp_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert all(d <= 2 * e for d, e in zip(doc["sup_diff"], doc["eps"]))
    assert _body((tmp_path / "ladder.csv").read_text()).startswith("eps,sup_diff,runtime\n")


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "a" / "b.txt"
    cli.atomic_write(p, "one")
    cli.atomic_write(p, "two")
    assert p.read_text() == "two"
    assert [q.name for q in p.parent.iterdir()] == ["b.txt"]
