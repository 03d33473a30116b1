from __future__ import annotations

import json

import pytest

from treecast.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_params_json(capsys):
    code, out, _ = run(capsys, "params", "--k", "2", "--omega", "1")
    assert code == 0
    doc = json.loads(out)
    assert doc["schema_version"] == "1"
    assert doc["lambda"] == pytest.approx(4.0)
    assert doc["theta"] == pytest.approx(-0.5)


def test_params_from_lambda_csv(capsys):
    code, out, _ = run(capsys, "params", "--k", "2", "--lambda", "4", "--format", "csv")
    assert code == 0
    rows = dict(line.split(",") for line in out.strip().split("\n")[1:])
    assert float(rows["omega"]) == pytest.approx(1.0)


@pytest.mark.parametrize("argv", [
    ["params", "--k", "2"],
    ["params", "--k", "2", "--omega", "1", "--lambda", "4"],
    ["params", "--k", "2", "--omega", "1", "--bogus"],
    ["frobnicate"],
    [],
])
def test_argument_errors(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2
    assert out == ""
    assert "usage" in err


def test_parameter_error_exit2(capsys):
    code, _, err = run(capsys, "params", "--k", "2", "--omega", "-1")
    assert code == 2
    assert "omega" in err


def test_bounds(capsys):
    code, out, _ = run(capsys, "bounds", "--k", "1000")
    doc = json.loads(out)
    assert code == 0
    assert doc["omega_bar"] == pytest.approx(7.1218e-3, rel=1e-4)
    assert doc["contraction_factor"] > 1


def test_broadcast_and_posterior(capsys):
    code, out, _ = run(capsys, "broadcast", "--k", "2", "--omega", "1", "--depth", "2",
                       "--samples", "5", "--seed", "3")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "config,probability" and len(lines) == 6
    code, out, _ = run(capsys, "posterior", "--k", "2", "--omega", "1", "--depth", "1",
                       "--leaves", "00", "--brute-force")
    doc = json.loads(out)
    assert doc["p1"] == pytest.approx(2 / 3)
    assert doc["p1_brute_force"] == pytest.approx(2 / 3)
    code, out, _ = run(capsys, "posterior", "--k", "2", "--omega", "1", "--depth", "1",
                       "--leaves", "00", "--mode", "paper")
    assert json.loads(out)["q0"] == pytest.approx(0.2)


def test_atoms_and_moments(capsys):
    code, out, _ = run(capsys, "atoms", "--k", "2", "--omega", "1", "--depth", "2", "--mode", "paper")
    assert code == 0 and out.startswith("quantity,condition,depth,mode,value,prob\n")
    code, out, _ = run(capsys, "moments", "--k", "2", "--omega", "1", "--depth", "2")
    assert code == 0
    row1 = out.strip().split("\n")[2].split(",")
    assert float(row1[1]) == pytest.approx(0.25)
    code, out, _ = run(capsys, "moments", "--k", "2", "--omega", "1", "--depth", "2",
                       "--method", "enumeration", "--format", "json")
    assert json.loads(out)["moments"][1]["xbar"] == pytest.approx(0.25)


def test_atoms_capacity_error(capsys):
    code, _, err = run(capsys, "atoms", "--k", "2", "--omega", "1", "--depth", "12")
    assert code == 2 and "population" in err.lower()


def test_decay_modes(capsys, tmp_path):
    path = tmp_path / "d.csv"
    code, out, _ = run(capsys, "decay", "--k", "2", "--omega", "1", "--depth", "3",
                       "--pop", "2000", "--out", str(path))
    assert code == 0 and out == ""
    assert path.read_text().startswith("depth,xbar,xbar1,xbar0,stderr\n")
    code, out, _ = run(capsys, "decay", "--k", "100000", "--omega", "1.1e-4", "--bound",
                       "--depth", "50", "--format", "json")
    doc = json.loads(out)
    assert doc["verdict"].startswith("non-reconstruction certified")


def test_verify_passes(capsys):
    code, out, _ = run(capsys, "verify", "--k", "3", "--omega", "0.3", "--depth", "2")
    doc = json.loads(out)
    assert code == 0
    assert doc["summary"]["overall_pass"] is True
    assert doc["summary"]["failed"] == 0


def test_verify_skips_large_depth(capsys):
    code, out, _ = run(capsys, "verify", "--k", "2", "--omega", "1", "--depth", "10",
                       "--pop", "5000")
    doc = json.loads(out)
    assert code == 0
    skipped = [r for r in doc["records"] if r["status"] == "skipped"]
    assert skipped and all(r["reason"] for r in skipped)
    assert any(r["name"].startswith("popdyn") and r["status"] == "checked" for r in doc["records"])


def test_scan_small(capsys):
    code, out, _ = run(capsys, "scan", "--k", "20", "--lambda-min", "1", "--lambda-max", "60",
                       "--steps", "4", "--pop", "2000", "--depth", "15")
    doc = json.loads(out)
    assert code == 0 and doc["schema_version"] == "1"
    assert len(doc["estimates"]) == 4
    code, _, err = run(capsys, "scan", "--k", "20", "--lambda-min", "5", "--lambda-max", "1")
    assert code == 2
