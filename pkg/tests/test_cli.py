import csv
import json
import math
import subprocess
import sys

import pytest

from morphforge.cli import dumps, main

RADIAL = json.dumps({"family": "radial", "params": {"R": 2}, "bump": {"r1": 3, "r2": 4},
                     "domain": {"center": [0, 0], "radius": 4.5}})


def invoke(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


def test_dumps_full_precision_and_nonfinite():
    text = dumps({"a": 0.1 + 0.2, "b": float("nan"), "c": [1, float("inf")], "d": "x"})
    doc = json.loads(text)
    assert doc["a"] == 0.1 + 0.2
    assert doc["b"] is None and doc["c"] == [1, None]


def test_solve_circle(capsys):
    code, doc = invoke(capsys, "solve-circle", "--R", "2", "--A", "0.5", "--t-samples", "11", "--quiet")
    assert code == 0
    res = doc["result"]
    assert res["mu"] > 0 and res["lambda"] > 0
    assert len(res["psi"]) == 11
    assert doc["config"]["k"] == 5 and doc["version"]


def test_sphere_canonical(capsys):
    code, doc = invoke(capsys, "sphere", "--R", "2", "--canonical", "0,1", "--quiet")
    assert code == 0
    assert doc["result"]["psi_bar_closed"] == pytest.approx(9 * math.pi, rel=1e-15)


def test_sphere_mobius_reduces(capsys):
    code, doc = invoke(capsys, "sphere", "--R", "1.5", "--mobius", "1,0,0.5j,2", "--quiet")
    assert code == 0
    assert doc["result"]["positive_definite"]


@pytest.mark.parametrize(
    "argv, code, err",
    [
        (["solve-circle", "--R", "0.5", "--A", "1"], 2, "ValidationError"),
        (["solve-circle", "--R", "2", "--A", "0.4"], 3, "Infeasible"),
        (["sphere", "--R", "2", "--canonical", "0,-1"], 2, "DomainError"),
        (["sphere", "--R", "2", "--mobius", "1,2,2,4"], 3, "DegenerateMap"),
        (["sobolev-norm", "--field", "{not json"], 2, "ValidationError"),
    ],
)
def test_exit_codes(capsys, argv, code, err):
    got, doc = invoke(capsys, *argv, "--quiet")
    assert got == code
    assert doc["error"] == err and doc["message"]


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"R": 2, "A": 0.5, "colour": "blue"}))
    code, doc = invoke(capsys, "solve-circle", "--config", str(cfg), "--quiet")
    assert code == 2 and doc["error"] == "ValidationError"


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"R": 2, "A": 0.7, "t_samples": 5}))
    code, doc = invoke(capsys, "solve-circle", "--config", str(cfg), "--A", "0.5", "--quiet")
    assert code == 0
    assert doc["config"]["A"] == 0.5 and doc["config"]["t_samples"] == 5


def test_out_file_is_deterministic(tmp_path, capsys):
    p = tmp_path / "run.json"
    runs = []
    for _ in range(2):
        assert main(["solve-circle", "--R", "2", "--A", "0.6", "--t-samples", "21", "--out", str(p), "--quiet"]) == 0
        runs.append(p.read_bytes())
    assert runs[0] == runs[1]
    assert capsys.readouterr().out == ""


def test_csv_roundtrip(tmp_path, capsys):
    out, table = tmp_path / "r.json", tmp_path / "psi.csv"
    assert main(["solve-circle", "--R", "2", "--A", "0.5", "--t-samples", "11", "--out", str(out),
                 "--csv", str(table), "--quiet"]) == 0
    rows = list(csv.reader(table.open()))
    assert rows[0] == ["t", "psi"]
    psi = json.loads(out.read_text())["result"]["psi"]
    assert [[float(a), float(b)] for a, b in rows[1:]] == psi


def test_bend_energy(capsys):
    code, doc = invoke(capsys, "bend-energy", "--manifold", "circle:R=1,n=64", "--target", "circle:R=2,n=64",
                       "--field", RADIAL, "--quiet")
    assert code == 0
    assert doc["result"]["E"] == pytest.approx(20 * math.pi, rel=1e-9)


def test_el_check(capsys):
    code, doc = invoke(capsys, "el-check", "--manifold", "warped-circle:R=1,n=32", "--map", "radial:R=2",
                       "--refine", "2", "--quiet")
    assert code == 0
    res = doc["result"]
    assert len(res["refinement_orders"]) == 2 and min(res["refinement_orders"]) > 3
    # the radial map is critical, so its first variation is pure discretization error
    assert abs(res["first_variation"]["finite_difference"]) < 1e-6
    code, doc = invoke(capsys, "el-check", "--manifold", "circle:R=1,n=64", "--map", "warp:R=2", "--quiet")
    assert code == 0 and doc["result"]["first_variation"]["rel_err"] < 1e-4


def test_sobolev_norm(capsys):
    code, doc = invoke(capsys, "sobolev-norm", "--field", RADIAL, "--k", "1", "--n", "65", "--n-time", "3", "--quiet")
    assert code == 0
    assert doc["result"]["norm_sq"] > 0


def test_admissibility(capsys):
    code, doc = invoke(capsys, "admissibility", "--manifold", "circle:R=1,n=64", "--target", "circle:R=2,n=64",
                       "--field", RADIAL, "--P", "1e9", "--k", "1", "--quiet")
    assert code == 0
    assert doc["result"]["maps_onto_target"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "morphforge.cli", "sphere", "--R", "2", "--canonical", "0,1", "--quiet"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "sphere"
