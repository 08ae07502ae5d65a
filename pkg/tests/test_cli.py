"""Exit-code contract and byte-level determinism of the command line."""

import json
import math
import subprocess
import sys

import numpy as np
import pytest

from crnhjb.cli import main
from crnhjb.hjb import Grid, GridFunction
from crnhjb.model import eikonal_controls


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def mm_file(tmp_path):
    path = tmp_path / "mm.json"
    assert run("model", "mm", "--k", "1,1,1,1", "--M", 1, "--out", path) == 0
    return path


@pytest.fixture
def eik_file(tmp_path):
    path = tmp_path / "eik.json"
    path.write_text(json.dumps(eikonal_controls(2).to_json()))
    return path


def _bad_conservation(tmp_path, mm_file):
    doc = json.loads(mm_file.read_text())
    doc["reactions"].append({"gamma_x": [1, 0], "gamma_y": [1, 1],
                             "rate": {"monomials": [{"k": 1.0, "x_exp": [0, 0], "y_exp": [0, 0]}]}})
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    return path


def _strip(doc):
    doc = dict(doc)
    doc["manifest"] = {k: v for k, v in doc["manifest"].items() if k != "duration_s"}
    return doc


# --------------------------------------------------------------------------
# model


def test_model_mm_then_validate(tmp_path, mm_file):
    doc = json.loads(mm_file.read_text())
    assert doc["conservation_M"] == 1 and len(doc["reactions"]) == 4
    out = tmp_path / "v.json"
    assert run("model", "validate", mm_file, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["pass"] and rep["classes"] == [1, 2, 2, 2] and rep["violations"] == []


def test_model_validate_failures(tmp_path, mm_file):
    out = tmp_path / "v.json"
    assert run("model", "validate", _bad_conservation(tmp_path, mm_file), "--out", out) == 2
    assert json.loads(out.read_text())["pass"] is False
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    assert run("model", "validate", junk, "--out", out) == 2
    assert run("model", "validate", tmp_path / "missing.json") == 1


def test_model_mm_usage_errors(tmp_path):
    assert run("model", "mm", "--k", "1,1,1", "--out", tmp_path / "x.json") == 1
    assert run("model", "mm", "--M", 0, "--out", tmp_path / "x.json") == 1


def test_unknown_subcommand():
    assert run("frobnicate") == 1
    assert run("model", "explode") == 1


# --------------------------------------------------------------------------
# Hamiltonian and Lagrangian


def test_ham_eval_values(tmp_path, mm_file):
    out = tmp_path / "h.json"
    assert run("ham", "eval", "--model", mm_file, "--x", "1,1", "--p", "0,0", "--out", out) == 0
    doc = json.loads(out.read_text())
    assert abs(doc["H"]) <= 1e-10
    assert run("ham", "eval", "--model", mm_file, "--x", "1,1", "--p", "0.6931471805599453,0", "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["H"] == pytest.approx((math.sqrt(7) - 1) / 2, abs=1e-10)
    assert sum(doc["theta_star"]) == pytest.approx(1.0)
    assert set(doc["manifest"]) == {"command", "config", "model_sha256", "seed", "version", "duration_s"}


def test_ham_eval_usage_errors(mm_file):
    assert run("ham", "eval", "--model", mm_file, "--x", "1,1") == 1
    assert run("ham", "eval", "--model", mm_file, "--x", "1,1,1", "--p", "0,0") == 1
    assert run("ham", "eval", "--model", mm_file, "--x", "1,a", "--p", "0,0") == 1


def test_ham_eval_controls(tmp_path, eik_file):
    out = tmp_path / "h.json"
    assert run("ham", "eval", "--model", eik_file, "--x", "1,1", "--p", "2,0", "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["H"] == 1.0 and doc["argmax_label"] == "+e1"


def test_ham_table(tmp_path, mm_file):
    out = tmp_path / "t.csv"
    assert run("ham", "table", "--model", mm_file, "--x", "1,1;2,3", "--p", "0,0;0.5,-0.5", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x_1,x_2,p_1,p_2,H" and len(lines) == 5
    assert float(lines[1].split(",")[-1]) == 0.0
    assert json.loads((tmp_path / "t.csv.manifest.json").read_text())["rows"] == 4


def test_lagrangian_eval(tmp_path, mm_file, eik_file):
    out = tmp_path / "l.json"
    assert run("lagrangian", "eval", "--model", eik_file, "--x", "1,1", "--v", "0,0", "--out", out) == 0
    assert json.loads(out.read_text())["value"] == pytest.approx(1.0)
    assert run("lagrangian", "eval", "--model", mm_file, "--x", "1,1", "--v", "0,-1", "--out", out) == 0
    assert "radius-limited" in json.loads(out.read_text())["flags"]


def test_action(tmp_path, eik_file):
    path = tmp_path / "p.csv"
    path.write_text("t,x_1,x_2\n0,1,1\n1,1.5,1\n2,1.5,1.5\n")
    out = tmp_path / "a.json"
    assert run("action", "--model", eik_file, "--path", path, "--out", out) == 0
    doc = json.loads(out.read_text())
    # moving at half speed in the unit box costs 1 per unit time
    assert doc["value"] == pytest.approx(2.0) and doc["infinite"] is False
    assert run("action", "--model", eik_file, "--path", tmp_path / "none.csv") == 1


# --------------------------------------------------------------------------
# solvers


def test_solve_stationary_constant(tmp_path, mm_file):
    out, rep = tmp_path / "f.csv", tmp_path / "r.json"
    code = run("solve", "stationary", "--model", mm_file, "--h-const", 0.5, "--lambda", 1.0,
               "--xmax", 3, "--cells", 6, "--out", out, "--report", rep)
    assert code == 0
    f = GridFunction.read_csv(out)
    assert np.max(np.abs(f.values - 0.5)) <= 1e-10
    doc = json.loads(rep.read_text())
    assert doc["report"]["discount"] < 1 and doc["manifest"]["config"]["lam"] == 1.0


def test_solve_stationary_from_csv(tmp_path, eik_file):
    g = Grid((2.0, 2.0), (4, 4))
    h = GridFunction.from_callable(g, lambda X: X[:, 0] - X[:, 1])
    hp = tmp_path / "h.csv"
    h.write_csv(hp)
    out = tmp_path / "f.csv"
    assert run("solve", "stationary", "--model", eik_file, "--h", hp, "--lambda", 0.5,
               "--out", out, "--report", tmp_path / "r.json") == 0
    assert GridFunction.read_csv(out).grid.same_as(g)


def test_solve_stationary_usage(tmp_path, mm_file):
    assert run("solve", "stationary", "--model", mm_file, "--lambda", 1.0, "--out", tmp_path / "f.csv") == 1
    assert run("solve", "stationary", "--model", mm_file, "--h-const", 1, "--lambda", 0.0,
               "--cells", 4, "--out", tmp_path / "f.csv") == 1


def test_solve_evolution(tmp_path, eik_file):
    prefix = tmp_path / "u"
    rep = tmp_path / "r.json"
    assert run("solve", "evolution", "--model", eik_file, "--u0-const", 2.0, "--T", 0.5,
               "--xmax", 2, "--cells", 8, "--sigma", "1.5,1.5", "--snapshots", "0.25",
               "--out", prefix, "--report", rep) == 0
    doc = json.loads(rep.read_text())
    assert len(doc["outputs"]) == 2
    for name in doc["outputs"]:
        # H(x, 0) = -1 for the eikonal family with unit cost
        assert np.all(GridFunction.read_csv(name).values < 2.0)
    assert run("solve", "evolution", "--model", eik_file, "--u0-const", 0.0, "--T", 0.5,
               "--xmax", 2, "--cells", 8, "--sigma", "1,1", "--dt", 10, "--out", prefix) == 1


# --------------------------------------------------------------------------
# verify and doubling


def test_verify_mm_passes(tmp_path, mm_file):
    out = tmp_path / "v.json"
    assert run("verify", mm_file, "--out", out, "--convexity-points", 5) == 0
    doc = json.loads(out.read_text())
    assert doc["pass"]
    assert set(doc["checks"]) == {"conservation", "irreducibility", "product_form", "containment",
                                  "convexity_and_zero"}


def test_verify_failures(tmp_path, mm_file):
    out = tmp_path / "v.json"
    assert run("verify", _bad_conservation(tmp_path, mm_file), "--out", out) == 2
    assert json.loads(out.read_text())["checks"]["conservation"]["pass"] is False
    assert run("verify", mm_file, "--samples", "0,1", "--cells", 10, "--convexity-points", 3, "--out", out) == 2
    doc = json.loads(out.read_text())
    assert doc["checks"]["irreducibility"]["pass"] is False
    assert doc["checks"]["irreducibility"]["extra_samples"][0]["pass"] is False
    assert doc["checks"]["containment"]["pass"]


def test_doubling_cli(tmp_path, mm_file):
    g = Grid((2.0, 2.0), (8, 8))
    u = GridFunction.from_callable(g, lambda X: 0.05 * np.sin(X[:, 0]))
    up, vp = tmp_path / "u.csv", tmp_path / "v.csv"
    u.write_csv(up)
    u.write_csv(vp)
    out, rows = tmp_path / "d.json", tmp_path / "d.csv"
    assert run("doubling", "--model", mm_file, "--u", up, "--v", vp, "--out", out, "--csv", rows) == 0
    doc = json.loads(out.read_text())
    assert doc["pass"] and all(r["penalty"] == 0.0 for r in doc["rows"])
    assert rows.read_text().startswith("eps,alpha,")
    other = tmp_path / "w.csv"
    GridFunction(Grid((3.0, 3.0), (8, 8)), u.values).write_csv(other)
    assert run("doubling", "--model", mm_file, "--u", up, "--v", other) == 1


# --------------------------------------------------------------------------
# determinism


def test_repeated_runs_are_byte_identical(tmp_path, mm_file):
    outs = []
    out = tmp_path / "v.json"
    for _ in range(2):
        assert run("verify", mm_file, "--cells", 10, "--convexity-points", 4, "--seed", 7, "--out", out) == 0
        outs.append(out.read_text())
    a, b = (json.loads(t) for t in outs)
    assert json.dumps(_strip(a), sort_keys=True) == json.dumps(_strip(b), sort_keys=True)
    strip_line = lambda t: "\n".join(l for l in t.splitlines() if '"duration_s"' not in l)
    assert strip_line(outs[0]) == strip_line(outs[1])


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "crnhjb.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "stationary" in res.stdout or "solve" in res.stdout
