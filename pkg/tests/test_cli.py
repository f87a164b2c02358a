import csv
import json

import numpy as np
import pytest

from eulerci.cli import RunConfig, main
from eulerci.grid import load_fields

SMALL = {
    "dimension": 2,
    "n_space": 64,
    "n_time": 32,
    "frequencies": [4],
    "mollify_scales": [0.5],
}


def _config(tmp_path, **kw):
    cfg = {**SMALL, "out": str(tmp_path / "out"), **kw}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_decompose_identity(capsys):
    assert main(["decompose", "[[1,0],[0,1]]"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["admissible"] and out["reconstruction_error"] <= 1e-12
    assert all(c["gamma_sq"] == pytest.approx(0.25) for c in out["coefficients"])


def test_decompose_inadmissible_and_malformed(capsys):
    assert main(["decompose", "[[1,0,0],[0,1,0],[0,0,3]]"]) == 2
    assert json.loads(capsys.readouterr().out)["admissible"] is False
    assert main(["decompose", "[[1,0],[0,"]) == 1
    assert main(["decompose", "[[1,0],[0,1]]", "--dim", "3"]) == 1


def test_verify_stationary(tmp_path):
    out = tmp_path / "vs.json"
    assert main(["verify-stationary", "--dim", "2", "--n-space", "32", "--draws", "2", "--out", str(out)]) == 0
    rec = json.loads(out.read_text())
    assert rec["residual"] <= 1e-9 and rec["passed"]


def test_run_zero_steps_writes_initial_record(tmp_path):
    assert main(["run", "--config", str(_config(tmp_path, n_steps=0))]) == 0
    root = tmp_path / "out"
    assert (root / "step_0" / "state.json").exists() and (root / "schedule.json").exists()
    rows = list(csv.DictReader((root / "step_0" / "diagnostics.csv").open()))
    names = {r["name"] for r in rows}
    assert {"euler_reynolds_residual", "energy_band", "div_v", "trace_stress"} <= names
    assert all(r["pass"] == "true" for r in rows)
    assert not (root / "step_1").exists()


def test_run_one_step_and_report(tmp_path, capsys):
    assert main(["step", "--config", str(_config(tmp_path))]) == 0
    root = tmp_path / "out"
    rows = {r["name"]: r for r in csv.DictReader((root / "step_1" / "diagnostics.csv").open())}
    assert float(rows["euler_reynolds_residual"]["measured"]) <= 1e-10
    assert rows["energy_gap"]["pass"] == "true"
    _, fields, _ = load_fields(root / "step_1" / "state")
    v = fields["v"]
    assert v.data.shape == (2, 32, 64, 64)
    capsys.readouterr()
    assert main(["report", "--out", str(root)]) == 0
    text = capsys.readouterr().out
    assert "[step_1]" in text and "energy_gap" in text


def test_run_outputs_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert main(["step", "--config", str(_config(a))]) == 0
    assert main(["step", "--config", str(_config(b))]) == 0
    for rel in ("schedule.json", "step_1/state.bin", "step_1/state.json", "step_1/diagnostics.csv", "step_1/step.json"):
        sa = (a / "out" / rel).read_bytes().replace(str(a).encode(), b"")
        sb = (b / "out" / rel).read_bytes().replace(str(b).encode(), b"")
        assert sa == sb, rel


def test_unresolvable_frequency_exit_3(tmp_path, capsys):
    path = _config(tmp_path, frequencies=[16])
    assert main(["step", "--config", str(path)]) == 3
    assert "required n_space = 256" in capsys.readouterr().err


def test_bad_config_exit_1(tmp_path):
    assert main(["run", "--config", str(_config(tmp_path, bogus=1))]) == 1
    assert main(["run", "--config", str(_config(tmp_path, n_space=63))]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1


def test_sweep_single_and_empty(tmp_path):
    path = _config(tmp_path)
    assert main(["sweep", "--config", str(path), "--lambda", "4"]) == 0
    rows = list(csv.DictReader((tmp_path / "out" / "sweep.csv").open()))
    assert {r["lambda"] for r in rows} == {"4"} and len(rows) == 4
    assert main(["sweep", "--config", str(path), "--lambda", ""]) == 1


def test_report_missing_directory(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 1


def test_run_config_defaults_round_trip():
    cfg = RunConfig.from_dict({})
    assert cfg.n_space == 256 and cfg.n_time == 64 and cfg.dimension == 2
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    e = cfg.energy_profile(np.array([0.0, np.pi / 2]))
    assert e == pytest.approx([1.0, 1.1])
