import json
import os

import numpy as np
import pytest

from drawdown_options.cli import main

BASE = """\
# flat reference model
r = 0.06
strike = 1.0
payoff = put
delta.family = constant
delta.params = 0.03
sigma.family = constant
sigma.params = 0.2
grid.n_s = 24
grid.n_y = 16
sim.n_paths = 200
sim.dt = 0.01
sim.horizon = 120
"""

FAST = """\
# higher rate so a short horizon clears the truncation budget
r = 0.3
strike = 1.0
payoff = put
delta.family = constant
delta.params = 0.1
sigma.family = constant
sigma.params = 0.2
grid.n_s = 24
grid.n_y = 16
sim.n_paths = 300
sim.dt = 0.01
sim.horizon = 24
"""


def write_config(tmp_path, text=BASE, extra=""):
    out_dir = tmp_path / "out"
    cfg = tmp_path / "run.conf"
    cfg.write_text(text + f"output_dir = {out_dir}\n" + extra)
    return str(cfg), out_dir


def read_rows(path):
    lines = path.read_text().splitlines()
    return lines[0], [line.split(",") for line in lines[1:]]


# ---------------------------------------------------------------------------
# roots


def test_roots_exports_full_grid(tmp_path, capsys):
    cfg, out = write_config(tmp_path)
    assert main(["roots", "--config", cfg]) == 0
    header, rows = read_rows(out / "roots.csv")
    assert header == "s,y,gamma1,gamma2,dg1_ds,dg2_ds,dg1_dy,dg2_dy"
    assert len(rows) == 24 * 16
    arr = np.array(rows, dtype=float)
    np.testing.assert_allclose(arr[:, 2], 1.5, rtol=1e-12)
    np.testing.assert_allclose(arr[:, 3], -2.0, rtol=1e-12)
    assert np.all(arr[:, 1] <= arr[:, 0] + 1e-15)  # drawdown clamped to s


def test_formatted_floats_round_trip(tmp_path):
    cfg, out = write_config(tmp_path)
    main(["roots", "--config", cfg])
    _, rows = read_rows(out / "roots.csv")
    for token in rows[7]:
        assert "%.17g" % float(token) == token


# ---------------------------------------------------------------------------
# boundary


def test_boundary_2d_flat_put(tmp_path):
    cfg, out = write_config(tmp_path)
    assert main(["boundary", "--config", cfg]) == 0
    header, rows = read_rows(out / "boundary2d.csv")
    assert header == "s,value,region_index"
    vals = np.array([float(r[1]) for r in rows])
    np.testing.assert_allclose(vals, 2.0 / 3.0, rtol=1e-10)
    sw_header, sw_rows = read_rows(out / "switches.csv")
    assert sw_header == "s,direction"
    assert len(sw_rows) == 1
    assert abs(float(sw_rows[0][0]) - 2.0 / 3.0) < 1e-9
    assert sw_rows[0][1] == "enter"
    # region index steps down from 1 to 0 across the switch
    for r in rows:
        want = 1 if float(r[0]) < 2.0 / 3.0 else 0
        assert int(r[2]) == want


def test_boundary_3d_exports_surface_and_caps(tmp_path):
    cfg, out = write_config(tmp_path)
    assert main(["boundary", "--config", cfg, "--dim", "3"]) == 0
    header, rows = read_rows(out / "boundary3d.csv")
    assert header == "s,y,value,active,region_label"
    assert len(rows) == 24 * 16
    labels = {r[4] for r in rows}
    assert labels <= {"stop", "direct", "reflect", ""}
    assert {"direct", "reflect"} <= labels
    cap_header, cap_rows = read_rows(out / "caps.csv")
    assert cap_header == "s,y_bar"
    assert len(cap_rows) == 24
    # flat model: the drawdown cap is s - 2/3 wherever it is finite
    for r in cap_rows:
        s, y_bar = float(r[0]), float(r[1])
        if np.isfinite(y_bar):
            assert abs(y_bar - (s - 2.0 / 3.0)) < 1e-6


def test_boundary_reruns_are_byte_identical(tmp_path):
    cfg, out = write_config(tmp_path)
    main(["boundary", "--config", cfg, "--dim", "3"])
    first = {p: (out / p).read_bytes() for p in ("boundary3d.csv", "caps.csv")}
    main(["boundary", "--config", cfg, "--dim", "3"])
    for p, blob in first.items():
        assert (out / p).read_bytes() == blob


def test_boundary_shoot_offset_put_only(tmp_path, capsys):
    cfg, out = write_config(tmp_path)
    assert main(["boundary", "--config", cfg, "--shoot-offset", "1e-4"]) == 0
    assert "shoot-offset" in capsys.readouterr().out
    header, rows = read_rows(out / "boundary2d_offset.csv")
    assert header == "s,value"
    assert len(rows) == 24


def test_boundary_bad_offset_is_constraint_breach(tmp_path, capsys):
    cfg, _ = write_config(tmp_path)
    assert main(["boundary", "--config", cfg, "--shoot-offset", "-0.5"]) == 2
    assert "constraint breach" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# value


def test_value_reference_point(tmp_path, capsys):
    cfg, out = write_config(tmp_path)
    assert main(["value", "--config", cfg, "--dim", "3"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("value(1, 1, 0) = ")
    header, rows = read_rows(out / "value.csv")
    assert header == "x,s,y,value"
    assert len(rows) == 1
    assert abs(float(rows[0][3]) - 4.0 / 27.0) < 1e-10


def test_value_2d_matches_3d_for_flat_model(tmp_path):
    cfg, out = write_config(tmp_path)
    main(["value", "--config", cfg, "--dim", "2"])
    v2 = float(read_rows(out / "value.csv")[1][0][3])
    main(["value", "--config", cfg, "--dim", "3"])
    v3 = float(read_rows(out / "value.csv")[1][0][3])
    assert abs(v2 - v3) < 1e-10


def test_value_outside_state_space_exits_3(tmp_path, capsys):
    cfg, _ = write_config(tmp_path)
    assert main(["value", "--config", cfg, "--x", "2.5", "--s", "2.0"]) == 3
    assert "domain error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# config handling


def test_unknown_key_exits_1(tmp_path, capsys):
    cfg, _ = write_config(tmp_path, extra="no.such.key = 1\n")
    assert main(["roots", "--config", cfg]) == 1
    assert "config error" in capsys.readouterr().err


def test_duplicate_key_exits_1(tmp_path):
    cfg, _ = write_config(tmp_path, extra="r = 0.07\n")
    assert main(["roots", "--config", cfg]) == 1


def test_missing_required_key_exits_1(tmp_path):
    cfg = tmp_path / "broken.conf"
    cfg.write_text("r = 0.06\nstrike = 1.0\n")
    assert main(["roots", "--config", str(cfg)]) == 1


def test_missing_config_file_exits_1(tmp_path):
    assert main(["roots", "--config", str(tmp_path / "absent.conf")]) == 1


def test_bad_subcommand_usage_exits_1(tmp_path, capsys):
    cfg, _ = write_config(tmp_path)
    assert main(["boundary", "--config", cfg, "--dim", "7"]) == 1


def test_out_flag_overrides_config_directory(tmp_path):
    cfg, out = write_config(tmp_path)
    other = tmp_path / "elsewhere"
    assert main(["roots", "--config", cfg, "--out", str(other)]) == 0
    assert (other / "roots.csv").exists()
    assert not (out / "roots.csv").exists()


# ---------------------------------------------------------------------------
# simulate and verify


def test_simulate_writes_json_and_respects_seed(tmp_path, capsys):
    cfg, out = write_config(tmp_path, text=FAST)
    assert main(["simulate", "--config", cfg, "--dim", "2", "--seed", "1"]) == 0
    blob1 = (out / "simulate.json").read_bytes()
    rec = json.loads(blob1)
    assert set(rec) == {
        "mean", "stderr", "n_paths", "n_horizon", "mean_stop_time",
        "x", "s", "y", "seed", "dt", "horizon",
    }
    assert rec["seed"] == 1
    out_line = capsys.readouterr().out
    assert "mean" in out_line and "stderr" in out_line

    main(["simulate", "--config", cfg, "--dim", "2", "--seed", "1"])
    assert (out / "simulate.json").read_bytes() == blob1
    main(["simulate", "--config", cfg, "--dim", "2", "--seed", "2"])
    assert json.loads((out / "simulate.json").read_text())["mean"] != rec["mean"]


def test_verify_rejects_dim_2(tmp_path, capsys):
    cfg, _ = write_config(tmp_path, text=FAST)
    assert main(["verify", "--config", cfg, "--dim", "2"]) == 1
    assert "verify requires --dim 3" in capsys.readouterr().err


def test_verify_passes_on_flat_model(tmp_path, capsys):
    cfg, out = write_config(tmp_path, text=FAST)
    assert main(["verify", "--config", cfg]) == 0
    assert "verification passed" in capsys.readouterr().out
    rec = json.loads((out / "verify.json").read_text())
    assert rec["passed"] is True
    assert rec["dominance_violations"] == 0
    assert rec["perturbation_violations"] == 0
    assert len(rec["perturbation_table"]) == 3
