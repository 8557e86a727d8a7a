import json

import numpy as np
import pytest
import yaml

from drillfunnel.cli import main, read_csv, run_experiment, write_csv
from drillfunnel.config import config_from_dict, load_preset
from drillfunnel.fdsolver import TRACE_COLUMNS, SimTrace

SHORT = {"time": {"t_end": 2.0, "n_output_rows": 50}}


def _write_cfg(path, extra=None):
    path.write_text(yaml.safe_dump({**SHORT, **(extra or {})}))
    return path


def test_write_csv_empty_trace(tmp_path):
    out = write_csv(SimTrace.empty(), tmp_path / "e.csv")
    assert out.read_text() == ",".join(TRACE_COLUMNS) + "\n"


def test_write_csv_roundtrip_exact(tmp_path, rng):
    cols = {c: rng.normal(size=20) for c in TRACE_COLUMNS}
    cols["t"] = np.cumsum(rng.uniform(0.1, 1.0, 20))
    cols["w"][-3:] = np.nan
    trace = SimTrace(**cols)
    back = read_csv(write_csv(trace, tmp_path / "r.csv"))
    for c in TRACE_COLUMNS:
        np.testing.assert_array_equal(getattr(back, c), getattr(trace, c))


def test_preset_rows_uniform(tmp_path):
    res = run_experiment(load_preset("l1")).results["explicit"]
    path = write_csv(res.trace, tmp_path / "l1.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "t,y,y_ref,e,w,psi_shift,v,u,z,I,energy"
    assert len(lines) == 501
    t = read_csv(path).t
    np.testing.assert_allclose(np.diff(t), 10 / 499, rtol=1e-12)
    assert t[0] == 0.0 and t[-1] == 10.0


def test_uncontrolled_zero_summary():
    cfg = config_from_dict({**SHORT, "control": False, "damping": {"distributed": None, "boundary": None}})
    s = run_experiment(cfg).summary["explicit"]
    assert s["max_abs_y"] == 0.0 and s["max_abs_u"] == 0.0 and s["final_energy"] == 0.0


def test_both_engines_report_deviation():
    res = run_experiment(config_from_dict({**SHORT, "engine": "both"}))
    assert set(res.results) == {"explicit", "implicit"}
    assert 0.0 < res.summary["cross_engine_max_abs_dy"] < 5e-2


def test_validate_prints_resolved(tmp_path, capsys):
    assert main(["validate", str(_write_cfg(tmp_path / "c.yaml"))]) == 0
    echoed = yaml.safe_load(capsys.readouterr().out)
    assert echoed["grid"]["n_points"] == 51 and echoed["time"]["t_end"] == 2.0


def test_run_writes_outputs(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "short.yaml")
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--engine", "both", "--out", str(out), "--seed", "7"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["short_config.yaml", "short_explicit.csv", "short_implicit.csv", "short_summary.json"]
    summary = json.loads((out / "short_summary.json").read_text())
    assert summary["explicit"]["violation_time"] is None
    assert yaml.safe_load((out / "short_config.yaml").read_text())["seed"] == 7
    assert "cross-engine" in capsys.readouterr().out


def test_run_violation_exit_code(tmp_path):
    cfg = _write_cfg(tmp_path / "jump.yaml", {"reference": {"times": [0.0, 0.5, 0.501], "values": [5.0, 5.0, 20.0]}})
    assert main(["run", str(cfg)]) == 2


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("params: {ell: -1}\n")
    assert main(["run", str(path)]) == 1
    assert "params" in capsys.readouterr().err


def test_measured_without_gain_fails(tmp_path):
    assert main(["run", str(_write_cfg(tmp_path / "m.yaml")), "--e-mode", "measured"]) == 1


def test_sweep(tmp_path):
    _write_cfg(tmp_path / "a.yaml")
    _write_cfg(tmp_path / "b.yaml", {"funnel": {"k": 2.0}})
    out = tmp_path / "out"
    assert main(["sweep", str(tmp_path / "*.yaml"), "--out", str(out)]) == 0
    assert (out / "a_explicit.csv").exists() and (out / "b_explicit.csv").exists()
    assert main(["sweep", str(tmp_path / "none*.yaml")]) == 1


def test_determinism_bytes(tmp_path):
    cfg = _write_cfg(tmp_path / "d.yaml")
    for sub in ("r1", "r2"):
        assert main(["run", str(cfg), "--out", str(tmp_path / sub), "--seed", "3"]) == 0
    a = (tmp_path / "r1" / "d_explicit.csv").read_bytes()
    assert a == (tmp_path / "r2" / "d_explicit.csv").read_bytes()
