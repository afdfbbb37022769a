import json
import subprocess
import sys

import pytest

from dispersion_lab import cli, sweep
from dispersion_lab.sweep import read_sweep_csv


def _run(*args):
    return cli.main([str(a) for a in args])


def test_version_via_module():
    out = subprocess.run([sys.executable, "-m", "dispersion_lab", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "0.1.0"


def test_mesh_round_trip(tmp_path, capsys):
    mesh = tmp_path / "cell.txt"
    vel = tmp_path / "b.csv"
    man = tmp_path / "mesh.json"
    assert _run("mesh", "--h", "1/16", "--out", mesh, "--velocity-out", vel, "--manifest", man) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["loop_nodes"] == 24
    assert json.loads(man.read_text())["outputs"] == [str(mesh), str(vel)]
    again = tmp_path / "again.txt"
    assert _run("mesh", "--mesh-in", mesh, "--out", again) == 0
    assert again.read_text() == mesh.read_text()


def test_u0_sweep_outputs_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["sweep-u0", "--h", "1/16", "--max", "10", "--points", "4"]
    assert _run(*args, "--out", a, "--jobs", "1") == 0
    assert _run(*args, "--out", b, "--jobs", "2") == 0
    assert a.read_text() == b.read_text()
    data = read_sweep_csv(a)
    assert data["parameter"] == "u0" and len(data["points"]) == 4 and data["limit"] is not None
    lines = a.read_text().splitlines()
    assert lines[0] == "u0,A11,A12,A21,A22,A11_sym,A22_sym,lambda_min,tag"
    assert lines[-1].startswith("inf,") and lines[-1].endswith(",limit")
    ma = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    mb = json.loads((tmp_path / "b.csv.manifest.json").read_text())
    assert ma["config_sha256"] == mb["config_sha256"]
    assert ma["failed"] == 0 and len(ma["points"]) == 5


def test_sweep_dumps(tmp_path):
    out = tmp_path / "ds.csv"
    sysf, pre = tmp_path / "A.txt", tmp_path / "corr"
    assert _run("sweep-ds", "--h", "1/16", "--points", "3", "--out", out,
                "--dump-system", sysf, "--dump-correctors", pre) == 0
    assert len(sysf.read_text().splitlines()) > 100
    chi = (tmp_path / "corr_chi.csv").read_text().splitlines()
    assert chi[0] == "node_index,y1,y2,chi1,chi2"
    assert (tmp_path / "corr_omega.csv").exists()


def test_jobs_from_environment(monkeypatch):
    monkeypatch.setenv("DISPERSION_LAB_JOBS", "3")
    assert sweep.default_jobs() == 3
    monkeypatch.setenv("DISPERSION_LAB_JOBS", "x")
    with pytest.raises(Exception):
        sweep.default_jobs()


def test_failed_point_is_isolated(tmp_path, monkeypatch):
    real = sweep.evaluate_point

    def flaky(ctx, parameter, value):
        if value == 2.5:
            raise RuntimeError("injected")
        return real(ctx, parameter, value)

    monkeypatch.setattr(sweep, "evaluate_point", flaky)
    out = tmp_path / "k.csv"
    code = _run("sweep-kappa", "--h", "1/16", "--min", "1", "--max", "4", "--points", "3",
                "--spacing", "linear", "--out", out, "--jobs", "1")
    assert code == 1
    rows = out.read_text().splitlines()
    assert sum(r.endswith(",failed") for r in rows) == 1
    assert sum(r.endswith(",point") for r in rows) == 2
    man = json.loads((tmp_path / "k.csv.manifest.json").read_text())
    assert man["failed"] == 1


def test_sweep_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"h": 0.0625, "velocity": "nonsymmetric", "points": 2, "max": 1.0}))
    out = tmp_path / "s.csv"
    assert _run("sweep-u0", "--config", cfg, "--out", out) == 0
    assert len(read_sweep_csv(out)["points"]) == 2
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert _run("sweep-u0", "--config", cfg, "--out", out) == 2


def test_macro_run(tmp_path):
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({"grid": {"n": 32, "length": 1.0}, "steps": 20,
                               "tensor": {"constant": [[0.8, 0.0], [0.0, 0.8]]},
                               "initial": {"bump": {"amplitude": 1.0, "width": 0.2}},
                               "output": {"snapshots": str(tmp_path / "snap.csv"),
                                          "snapshot_every": 10}}))
    out = tmp_path / "series.csv"
    assert _run("macro", cfg, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,mass,stored_energy,min_u,max_u" and len(lines) == 22
    man = json.loads((tmp_path / "series.csv.manifest.json").read_text())
    assert man["mass_drift_relative"] <= 1e-12
    assert man["v_in"]["max_abs_minus_f_u_in"] <= 1e-12
    assert len((tmp_path / "snap.csv").read_text().splitlines()) == 1 + 3 * 32


def test_macro_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({"grid": {"n": 2, "length": 1.0}, "steps": 1}))
    assert _run("macro", cfg) == 2
    assert "grid/n" in capsys.readouterr().err
    cfg.write_text("{not json")
    assert _run("macro", cfg) == 2


def test_verify_and_fault(tmp_path, capsys):
    rep = tmp_path / "v.csv"
    assert _run("verify", "--h", "1/16", "--out", rep) == 0
    assert "gating checks passed" in capsys.readouterr().out
    assert rep.read_text().startswith("check,value,threshold,status")
    assert _run("verify", "--h", "1/16", "--fault", "skew") == 1
    out = capsys.readouterr().out
    assert "FAIL      symmetric_part_residual" in out
