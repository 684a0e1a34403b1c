import json
import subprocess
import sys
import time

import pytest
import yaml

from singular_bsde.cli import main
from singular_bsde.config import resolve
from singular_bsde.errors import ConfigError

SOLVE = {"generator": {"kind": "power", "q": 3},
         "coefficients": {"eta": {"kind": "constant", "value": 1.0}},
         "scheme": {"delta": 0.1, "n_steps": 90}, "seed": 3}


def _write(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def _run(tmp_path, command, cfg, out="out", extra=()):
    return main([command, _write(tmp_path, cfg), "--out", str(tmp_path / out), *extra])


def test_solve_rows_and_manifest(tmp_path):
    assert _run(tmp_path, "solve", SOLVE) == 0
    lines = (tmp_path / "out" / "solve.csv").read_text().splitlines()
    assert len(lines) == 1 + 91
    assert lines[0] == "step,time,mean,q05,q50,q95"
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["config"]["scheme"]["n_paths"] == 1 and man["seed"] == 3
    assert set(man["outputs"]) == {"solve.csv"}


def test_solve_reproducible_and_manifest_rerun(tmp_path):
    cfg = dict(SOLVE, coefficients={"eta": {"kind": "arctan", "eta_lo": 0.5, "eta_hi": 2.0}},
               scheme={"delta": 0.1, "n_steps": 18, "n_paths": 200})
    assert _run(tmp_path, "solve", cfg, "a") == 0
    assert _run(tmp_path, "solve", cfg, "b") == 0
    a = (tmp_path / "a" / "solve.csv").read_bytes()
    assert a == (tmp_path / "b" / "solve.csv").read_bytes()
    assert main(["solve", str(tmp_path / "a" / "manifest.json"),
                 "--out", str(tmp_path / "c")]) == 0
    assert a == (tmp_path / "c" / "solve.csv").read_bytes()


def test_missing_generator_exit_one(tmp_path, capsys):
    cfg = {k: v for k, v in SOLVE.items() if k != "generator"}
    assert _run(tmp_path, "solve", cfg) == 1
    assert "generator" in capsys.readouterr().err


def test_unknown_key_reports_path(tmp_path, capsys):
    cfg = dict(SOLVE, scheme={"delta": 0.1, "n_steps": 9, "nsteps": 3})
    assert _run(tmp_path, "solve", cfg) == 1
    assert "scheme.nsteps" in capsys.readouterr().err


def test_missing_file_exit_one(tmp_path):
    assert main(["solve", str(tmp_path / "nope.yaml")]) == 1


def test_numerical_failure_exit_two(tmp_path, capsys):
    cfg = dict(SOLVE, generator={"kind": "power", "q": 3},
               expansion={"order": 1})
    assert _run(tmp_path, "solve", cfg) == 2
    assert "expansion" in capsys.readouterr().err


def test_sweep_slope_matches_json(tmp_path, capsys):
    cfg = {"generator": {"kind": "power", "q": 3},
           "coefficients": {"eta": {"kind": "constant", "value": 1.0}},
           "analysis": {"h_list": [0.02, 0.01, 0.005, 0.0025],
                        "delta_rule": {"kind": "fixed", "delta": 0.1}}}
    t0 = time.perf_counter()
    assert _run(tmp_path, "sweep", cfg) == 0
    assert time.perf_counter() - t0 < 60
    out = capsys.readouterr().out
    rep = json.loads((tmp_path / "out" / "sweep.json").read_text())
    for name, fit in rep["slopes"].items():
        assert f"slope {name}: {fit['slope']!r}" in out
    assert len((tmp_path / "out" / "sweep.csv").read_text().splitlines()) == 5


def test_sweep_empty_list_exit_one(tmp_path):
    cfg = {"generator": {"kind": "power", "q": 3},
           "coefficients": {"eta": {"kind": "constant", "value": 1.0}},
           "analysis": {"h_list": [], "delta_rule": {"kind": "fixed", "delta": 0.1}}}
    assert _run(tmp_path, "sweep", cfg) == 1


def test_audit_line(tmp_path, capsys):
    assert _run(tmp_path, "audit-assumptions", {"generator": {"kind": "power", "q": 3}}) == 0
    assert "A5: pass (constant κ²=p+1)" in capsys.readouterr().out
    rep = json.loads((tmp_path / "out" / "audit.json").read_text())
    assert rep["a5_pass"]


def test_expansion_check_zero_H(tmp_path):
    assert _run(tmp_path, "expansion-check", SOLVE) == 0
    rep = json.loads((tmp_path / "out" / "expansion_check.json").read_text())
    assert rep["identically_zero"] and rep["source"] == "oracle"
    assert rep["sup_ratio"] == 0.0


def test_expansion_check_lambda(tmp_path):
    cfg = dict(SOLVE, coefficients={"eta": {"kind": "constant", "value": 1.0},
                                    "lambda": {"value": 1.0}})
    assert _run(tmp_path, "expansion-check", cfg) == 0
    rep = json.loads((tmp_path / "out" / "expansion_check.json").read_text())
    assert rep["finite"] and not rep["identically_zero"]


def test_liquidate_zero_position(tmp_path):
    cfg = {"liquidation": {"x0": 0.0, "p": 1.5, "delta": 0.1, "n_steps": 9}}
    assert _run(tmp_path, "liquidate", cfg) == 0
    rep = json.loads((tmp_path / "out" / "liquidation.json").read_text())
    assert rep["value"] == 0.0 and rep["mc_cost"] == 0.0
    rows = (tmp_path / "out" / "trajectory.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[2]) == 0.0 for r in rows)


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("SINGULAR_BSDE_OUT", str(tmp_path / "envout"))
    assert main(["audit-assumptions", _write(tmp_path, {"generator": {"kind": "power",
                                                                      "q": 2}})]) == 0
    assert (tmp_path / "envout" / "audit.json").exists()


def test_seed_override(tmp_path):
    cfg = dict(SOLVE, coefficients={"eta": {"kind": "arctan", "eta_lo": 0.5, "eta_hi": 2.0}},
               scheme={"delta": 0.1, "n_steps": 9, "n_paths": 50})
    assert _run(tmp_path, "solve", cfg, "a", ("--seed", "11")) == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 11


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, {"generator": {"kind": "exponential", "a": 1}})
    out = subprocess.run([sys.executable, "-m", "singular_bsde", "audit-assumptions", cfg,
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert out.returncode == 0 and "A5: pass" in out.stdout


# config schema ------------------------------------------------------------------

def test_resolve_fills_defaults():
    cfg = resolve(SOLVE, "solve")
    assert cfg["horizon"] == 1.0 and cfg["expansion"]["order"] == 0
    assert cfg["scheme"]["newton_tol"] == 1e-12


@pytest.mark.parametrize("bad, where", [
    ({"scheme": {"delta": 1.5, "n_steps": 4}}, "scheme.delta"),
    ({"scheme": {"delta": 0.1, "n_steps": 0}}, "scheme.n_steps"),
    ({"generator": {"kind": "power", "q": 0.5}}, "generator.q"),
    ({"generator": {"kind": "quartic"}}, "generator.kind"),
    ({"coefficients": {"eta": {"kind": "arctan", "eta_lo": 2, "eta_hi": 1}}},
     "coefficients.eta.eta_hi"),
    ({"seed": -1}, "seed"),
    ({"extras": 1}, "extras"),
])
def test_resolve_errors(bad, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        resolve(dict(SOLVE, **bad), "solve")
