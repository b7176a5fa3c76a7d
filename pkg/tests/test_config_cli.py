import csv
import json

import pytest

from sigfree import cli
from sigfree.config import ConfigError, default_dict, from_dict, load

DET = {"family": "deterministic", "value": 0.5}


def write_cfg(tmp_path, body, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps({"schema_version": 1, **body}))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, command, body, *extra):
    cfg = write_cfg(tmp_path, body)
    out = tmp_path / "out"
    rc = cli.main([command, "--config", cfg, "--output", str(out), *extra])
    return rc, out


# --- configuration -----------------------------------------------------------

def test_defaults_validate():
    cfg = from_dict(default_dict())
    assert cfg.lam == (0.2, 0.2)
    assert cfg.policies == ["FIFO", "MS", "LQF"]
    assert cfg.spec.crossing.mean == pytest.approx(0.5)


def test_unknown_key_rejected():
    raw = default_dict()
    raw["simulation"] = {"horizon": 100.0, "bogus": 1}
    with pytest.raises(ConfigError) as err:
        from_dict(raw)
    assert "bogus" in str(err.value)


def test_missing_version_rejected():
    with pytest.raises(ConfigError):
        from_dict({"intersection": {"lambda": [0.1, 0.1]}})


@pytest.mark.parametrize("field,value,path", [
    ("horizon", -1.0, "simulation.horizon"),
    ("seed", 1.5, "simulation.seed"),
])
def test_field_path_in_error(field, value, path):
    raw = default_dict()
    raw["simulation"] = {field: value}
    with pytest.raises(ConfigError) as err:
        from_dict(raw)
    assert err.value.path == path


def test_headway_invariant_named():
    raw = default_dict()
    raw["intersection"] = {"theta": [[0.5, 0.4], [1.0, 0.5]]}
    with pytest.raises(ConfigError) as err:
        from_dict(raw)
    assert err.value.path == "intersection.theta"


def test_crossing_family_parameters_required():
    raw = default_dict()
    raw["intersection"] = {"crossing": {"family": "uniform", "low": 0.1}}
    with pytest.raises(ConfigError) as err:
        from_dict(raw)
    assert err.value.path == "intersection.crossing.high"


def test_warmup_below_horizon():
    raw = default_dict()
    raw["simulation"] = {"horizon": 100.0, "warmup": 200.0}
    with pytest.raises(ConfigError):
        from_dict(raw)


def test_grid_product_order():
    raw = default_dict()
    raw["intersection"] = {"grid": {"lam1": [0.1, 0.2], "lam2": [0.3, 0.4]}}
    assert from_dict(raw).grid == [(0.1, 0.3), (0.1, 0.4), (0.2, 0.3), (0.2, 0.4)]


def test_overrides_apply(tmp_path):
    cfg = load(write_cfg(tmp_path, {}), {"simulation.seed": 9})
    assert cfg.seed == 9


def test_unreadable_file():
    with pytest.raises(ConfigError):
        load("/nonexistent/cfg.json")


# --- bounds ------------------------------------------------------------------

def test_bounds_reference_point(tmp_path):
    rc, out = run(tmp_path, "bounds", {"intersection": {"crossing": DET, "lambda": [0.2, 0.2]}})
    assert rc == 0
    rep = json.loads((out / "bounds.json").read_text())
    pols = rep["policies"]
    assert pols["FIFO"]["stable"] and pols["MS"]["stable"] and pols["LQF"]["stable"]
    lo, hi = pols["LQF"]["beta_window"]
    assert lo == pytest.approx(6 / 7) and hi == pytest.approx(7 / 6)


def test_bounds_fifo_unstable_ms_stable(tmp_path):
    rc, out = run(tmp_path, "bounds", {"intersection": {"lambda": [0.45, 0.45]}})
    assert rc == 0
    pols = json.loads((out / "bounds.json").read_text())["policies"]
    assert not pols["FIFO"]["stable"] and pols["FIFO"]["w_upper"] is None
    assert pols["MS"]["stable"]


def test_bounds_malformed_theta(tmp_path, capsys):
    rc, _ = run(tmp_path, "bounds", {"intersection": {"theta": [[0.5, 0.5], [1.0, 0.5]]}})
    assert rc == 2
    assert "intersection.theta" in capsys.readouterr().err


def test_bad_json_exit_code(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli.main(["bounds", "--config", str(path), "--output", str(tmp_path)]) == 2


def test_bad_jobs(tmp_path):
    assert cli.main(["bounds", "--jobs", "0", "--output", str(tmp_path)]) == 2


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["bounds", "--output", str(blocker / "sub")]) == 3


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["bounds"]) == 0
    assert (tmp_path / "env" / "bounds.json").exists()


def test_output_flag_beats_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["bounds", "--output", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "bounds.json").exists()
    assert not (tmp_path / "env").exists()


# --- sweep -------------------------------------------------------------------

def sweep_body(grid, **sim):
    return {
        "intersection": {"grid": grid},
        "simulation": {"horizon": 2000.0, "seed": 3, **sim},
    }


def test_sweep_tiny_grid(tmp_path):
    rc, out = run(tmp_path, "sweep", sweep_body({"lam1": [0.01, 0.02], "lam2": [0.01, 0.02]}))
    assert rc == 0
    rows = read_csv(out / "sweep.csv")
    assert len(rows) == 4 * 3
    assert list(rows[0]) == ["lam1", "lam2", "policy", "mean_delay", "congested", "verdict"]
    assert all(r["congested"] == "0" for r in rows)


def test_sweep_flags_ms_boundary(tmp_path):
    body = sweep_body({"points": [[0.4, 0.4], [0.6, 0.6]]}, horizon=20000.0)
    body["policy"] = {"names": ["MS"]}
    rc, out = run(tmp_path, "sweep", body)
    assert rc == 0
    flags = [r["congested"] for r in read_csv(out / "sweep.csv")]
    assert flags == ["0", "1"]


def test_sweep_reproducible(tmp_path):
    body = sweep_body({"points": [[0.2, 0.1], [0.1, 0.3]]})
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    _, out_a = run(a, "sweep", body)
    _, out_b = run(b, "sweep", body, "--jobs", "2")
    assert (out_a / "sweep.csv").read_bytes() == (out_b / "sweep.csv").read_bytes()


def test_sweep_needs_grid(tmp_path):
    rc, _ = run(tmp_path, "sweep", {})
    assert rc == 2


# --- region ------------------------------------------------------------------

def test_region_outputs(tmp_path):
    rc, out = run(tmp_path, "region", {"intersection": {"crossing": DET}, "region": {"rays": 11}})
    assert rc == 0
    curve = read_csv(out / "capacity_curve.csv")
    assert len(curve) == 11
    for row in (curve[0], curve[-1]):
        vals = [float(row[f"lambda_bar_{p}"]) for p in ("FIFO", "MS", "LQF")]
        assert vals == pytest.approx([1.0] * 3)
    mid = curve[5]
    assert float(mid["p1"]) == pytest.approx(0.5)
    assert float(mid["lambda_bar_FIFO"]) == pytest.approx(0.8)
    assert float(mid["lambda_bar_MS"]) == pytest.approx(1.0)
    assert float(mid["lambda_bar_LQF"]) == pytest.approx(4 / 9, abs=1e-6)
    for row in curve:
        lqf, fifo, ms = (float(row[f"lambda_bar_{p}"]) for p in ("LQF", "FIFO", "MS"))
        assert lqf <= fifo + 1e-9 and fifo <= ms + 1e-9
    boundary = read_csv(out / "region.csv")
    assert len(boundary) == 3 * 11


def test_region_deterministic_text(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    _, out_a = run(a, "region", {"region": {"rays": 5}})
    _, out_b = run(b, "region", {"region": {"rays": 5}})
    assert (out_a / "region.csv").read_text() == (out_b / "region.csv").read_text()


# --- simulate, micro-sim, drift-probe ----------------------------------------

def test_simulate_rows(tmp_path):
    rc, out = run(tmp_path, "simulate", {"simulation": {"horizon": 1000.0, "replications": 2}})
    assert rc == 0
    rows = read_csv(out / "simulate.csv")
    assert [r["policy"] for r in rows] == ["FIFO", "MS", "LQF"]
    assert all(r["replications"] == "2" for r in rows)


def test_micro_sim_files(tmp_path):
    body = {"intersection": {"lambda": [0.1, 0.1]}, "approach": {"duration": 60.0},
            "policy": {"names": ["FIFO"]}}
    rc, out = run(tmp_path, "micro-sim", body)
    assert rc == 0
    summary = read_csv(out / "micro_summary.csv")
    assert summary[0]["safety_violations"] == "0"
    assert (out / "micro_FIFO_delays.csv").exists()
    assert (out / "micro_FIFO_trajectory.csv").exists()


def test_drift_probe_rows(tmp_path):
    body = {"drift": {"states": 3, "samples": 2000}}
    rc, out = run(tmp_path, "drift-probe", body)
    assert rc == 0
    rows = read_csv(out / "drift.csv")
    assert len(rows) == 3
    for r in rows:
        assert 10 <= float(r["x1"]) + float(r["x2"]) <= 100


def test_floats_nine_significant_digits():
    assert cli.fmt(1 / 3) == "0.333333333"
    assert cli.fmt(True) == "1"
    assert cli.fmt("MS") == "MS"
