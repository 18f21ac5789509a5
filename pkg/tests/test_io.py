import json

import numpy as np
import pytest

from sasakiflow import cli, flow as fl, geometry as geo, io as sio
from sasakiflow.errors import CorruptArtifact, ParseError, ValidationError

SMALL = "geometry.grid_nodes = 129\nflow.dt = 1e-4\nflow.t_max = 0.5\nflow.sample_every = 10\n"


def test_minimal_config_applies_defaults(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("geometry.normalization = unit\n")
    cfg = sio.load_config(p)
    assert cfg.geometry.grid_nodes == 513 and cfg.flow.dt == 1e-5 and cfg.flow.t_max == 10


def test_json_config_same_keys(tmp_path):
    a = tmp_path / "a.json"
    a.write_text(json.dumps({"geometry": {"grid_nodes": 129}, "init.kind": "zero"}))
    b = tmp_path / "b.cfg"
    b.write_text("geometry.grid_nodes = 129\ninit.kind = zero\n")
    assert sio.load_config(a) == sio.load_config(b)


def test_unknown_key_names_key(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\n\nflow.dtt = 1\n")
    with pytest.raises(ParseError) as e:
        sio.load_config(p)
    assert e.value.key == "flow.dtt" and e.value.line == 3


def test_validation_lists_every_problem(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("geometry.grid_nodes = 512\nflow.safety = 3\ninit.kind = nope\n")
    with pytest.raises(ValidationError) as e:
        sio.load_config(p)
    assert len(e.value.problems) == 3


def test_type_errors_are_validation_errors():
    with pytest.raises(ValidationError):
        sio.config_from_flat({"flow.dt": "fast"})


def test_checkpoint_round_trip_exact(tmp_path, small_traj):
    ck = sio.checkpoint_from_state(small_traj, -1, {"geometry": {"grid_nodes": 129}})
    p = sio.write_checkpoint(ck, tmp_path / "ck.json")
    back = sio.read_checkpoint(p)
    assert np.array_equal(back.psi, ck.psi) and back.alpha == ck.alpha and back.t == ck.t
    assert np.array_equal(back.x, ck.x) and np.array_equal(back.h, ck.h)


def test_checkpoint_tamper_detected(tmp_path, small_traj):
    p = sio.write_checkpoint(sio.checkpoint_from_state(small_traj), tmp_path / "ck.json")
    doc = json.loads(p.read_text())
    doc["alpha"] += 1e-12
    p.write_text(json.dumps(doc))
    with pytest.raises(CorruptArtifact):
        sio.read_checkpoint(p)


def test_timeseries_header_and_rows(tmp_path, small_traj):
    p = sio.write_timeseries(small_traj, tmp_path / "ts.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(sio.CSV_COLUMNS)
    cfg = small_traj.flow
    assert len(lines) - 1 == int(cfg.t_max / (cfg.dt * cfg.sample_every)) + 1
    data = sio.read_timeseries(p)
    np.testing.assert_array_equal(data["K"], small_traj.functionals["K"])


def test_save_load_trajectory(tmp_path, small_bg):
    cfg = sio.config_from_flat(sio.parse_dotted(SMALL + "init.seed = 2\n"))
    bg, tr = sio.run_config(cfg)
    d = sio.save_trajectory(tr, cfg, tmp_path / "run")
    cfg2, tr2 = sio.load_trajectory(d)
    assert cfg2 == cfg
    assert np.array_equal(tr2.psi, tr.psi) and np.array_equal(tr2.alpha, tr.alpha)


def _cli(*args):
    return cli.main([str(a) for a in args])


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(sio.OUTPUT_ROOT_ENV, str(tmp_path))
    good = tmp_path / "e.cfg"
    good.write_text(SMALL + "init.kind = zero\n")
    assert _cli("run", "--config", good, "--out", "e") == 0
    assert (tmp_path / "e" / "timeseries.csv").is_file()
    assert _cli("verify", "--traj", tmp_path / "e", "--out", "rep") == 0
    assert json.loads((tmp_path / "rep" / "report.json").read_text())["summary"]["passed"]
    assert _cli("report", "--traj", tmp_path / "e") == 0

    bad = tmp_path / "bad.cfg"
    bad.write_text("geometry.grid_nodes = 512\n")
    assert _cli("run", "--config", bad) == 1
    assert _cli("run", "--config", tmp_path / "missing.cfg") == 1

    unstable = tmp_path / "u.cfg"
    unstable.write_text(SMALL.replace("1e-4", "1e-3") + "init.amplitude = 0.5\n")
    assert _cli("run", "--config", unstable, "--out", "u") == 2

    trunc = tmp_path / "e" / "trajectory.npz"
    trunc.write_bytes(trunc.read_bytes()[:1000])
    assert _cli("verify", "--traj", tmp_path / "e") == 2
    assert "truncated" in capsys.readouterr().err


def test_cli_c0_einstein(tmp_path, monkeypatch):
    monkeypatch.setenv(sio.OUTPUT_ROOT_ENV, str(tmp_path))
    cfg = tmp_path / "e.cfg"
    cfg.write_text(SMALL + "init.kind = zero\n")
    assert _cli("c0", "--config", cfg, "--out", "c0") == 0
    res = json.loads((tmp_path / "c0" / "c0.json").read_text())
    assert res["c0_paper"] == 0 and res["c0_shoot"] == 0


def test_cli_mt_scan(tmp_path, monkeypatch):
    monkeypatch.setenv(sio.OUTPUT_ROOT_ENV, str(tmp_path))
    cfg = tmp_path / "g.cfg"
    cfg.write_text("geometry.grid_nodes = 129\n")
    assert _cli("mt-scan", "--samples", 200, "--seed", 1, "--config", cfg, "--out", "mt") == 0
    fit = json.loads((tmp_path / "mt" / "mtfit.json").read_text())
    assert fit["A"] > 0 and fit["min_margin"] >= 0
    assert len((tmp_path / "mt" / "mt_scatter.csv").read_text().splitlines()) == 201


def test_file_init_uses_checkpoint(tmp_path, small_traj):
    ck = sio.write_checkpoint(sio.checkpoint_from_state(small_traj, 5), tmp_path / "ck.json")
    cfg = sio.config_from_flat(sio.parse_dotted(SMALL + f"init.kind = file\ninit.file = {ck}\n"))
    bg = geo.build_background(cfg.geometry)
    phi = sio.initial_potential(bg, cfg)
    np.testing.assert_array_equal(phi, small_traj.psi[5] + small_traj.alpha[5])
