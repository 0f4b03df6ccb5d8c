import json
import subprocess
import sys
from pathlib import Path

import pytest

from bslp import cli
from bslp.solve import NumericalInconsistency

E1 = str(Path(cli.__file__).parent / "data" / "e1.json")
GOLDEN = Path(__file__).parent / "golden" / "example_e1.txt"


def run(capsys, *argv):
    code = cli.run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_example_report_golden(capsys):
    code, out, _ = run(capsys, "example-e1")
    assert code == 0
    assert out == GOLDEN.read_text()


def test_module_entry_point():
    res = subprocess.run(
        [sys.executable, "-m", "bslp", "solve", E1], capture_output=True, text=True, check=False
    )
    assert res.returncode == 0
    doc = json.loads(res.stdout)
    assert doc["x"] == [6.0] and doc["value"] == 2.5


def test_solve_worst(capsys):
    code, out, _ = run(capsys, "solve", E1, "--spec", "worst")
    doc = json.loads(out)
    assert code == 0 and doc["status"] == "global_optimal" and doc["value"] == 3.0


def test_solve_eps_schedule(capsys):
    code, out, _ = run(capsys, "solve", E1, "--eps-schedule", "1,0.1,0.01")
    assert code == 0
    assert "eps_path" in json.loads(out)


def test_check(capsys):
    code, out, _ = run(capsys, "check", E1)
    doc = json.loads(out)
    assert code == 0 and doc["dom_f"]["nonempty"]
    assert doc["complete_recourse"]["complete"] is False


def test_evaluate_grid(capsys, tmp_path):
    target = tmp_path / "grid.csv"
    code, _, _ = run(capsys, "evaluate", E1, "--grid", "1:6:0.01", "--out", str(target))
    lines = target.read_text().splitlines()
    assert code == 0 and lines[0] == "x,value" and len(lines) == 502
    assert lines[101].split(",") == ["2", "4"]


def test_evaluate_points(capsys):
    code, out, _ = run(capsys, "evaluate", E1, "--x", "6", "--spec", "var:0.5")
    assert code == 0 and out.splitlines()[1] == "6,2"


def test_dominance_feasibility(capsys):
    assert run(capsys, "dominance", E1, "--benchmark", "3.4", "--x", "5.6")[0] == 0
    code, out, _ = run(capsys, "dominance", E1, "--benchmark", "3.4", "--x", "5.5")
    assert code == 1 and json.loads(out)["violation"] == 0.5


def test_dominance_optimise(capsys):
    code, out, _ = run(capsys, "dominance", E1, "--benchmark", "3.4@1", "--objective", "1", "--method", "reformulate")
    assert code == 0 and json.loads(out)["x"][0] == pytest.approx(5.6, abs=1e-6)
    assert run(capsys, "dominance", E1, "--benchmark", "-100")[0] == 1


def test_reformulate(capsys, tmp_path):
    listing = tmp_path / "ep.txt"
    code, out, _ = run(capsys, "reformulate", E1, "--spec", "ep:4", "--kkt", "--listing", str(listing))
    doc = json.loads(out)
    assert code == 0 and doc["genform"]["integer"] == [1, 2] and "kkt" in doc
    assert "binary: theta1, theta2" in listing.read_text()
    code, out, _ = run(capsys, "reformulate", E1, "--benchmark", "3.4", "--order", "second", "--format", "listing")
    assert code == 0 and out.startswith("minimize")


def test_stability_deterministic(capsys):
    argv = ("stability", E1, "--sizes", "10,20", "--seeds", "2", "--seed", "5")
    first = run(capsys, *argv)[1]
    second = run(capsys, *argv)[1]
    assert first == second
    lines = first.splitlines()
    assert lines[0] == "N,seed,value,error,x_star" and len(lines) == 5
    timed = run(capsys, *argv, "--timing")[1]
    assert timed.splitlines()[0].endswith(",wall_ms")


@pytest.mark.parametrize(
    "argv",
    [
        ("solve", E1, "--spec", "bogus"),
        ("solve", "/no/such/file.json"),
        ("evaluate", E1, "--x", "2,3"),
        ("evaluate", E1),
        ("stability", E1, "--spec", "worst"),
        ("nonsense",),
    ],
)
def test_input_errors(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_infeasible_exit(capsys, tmp_path):
    doc = json.loads(Path(E1).read_text())
    doc["scenarios"] = {"atoms": [[0.0, -10.0, -10.0]], "probs": [1.0]}
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert run(capsys, "solve", str(bad), "--method", "grid")[0] == 1


def test_numerical_exit(capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise NumericalInconsistency("forced")

    monkeypatch.setattr(cli, "solve_risk_model", boom)
    assert run(capsys, "solve", E1)[0] == 3
