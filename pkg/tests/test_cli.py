import numpy as np
import pytest
import yaml

from kerrlogic import cli
from kerrlogic import reduction as rd

SMALL = ["-N", "14", "-d", "6"]


def run(tmp_path, *args):
    return cli.main([*args, "--out", str(tmp_path)])


def write_config(tmp_path, **kw):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(kw))
    return str(path)


def test_validate_passes(tmp_path):
    assert run(tmp_path, "validate") == 0
    report = yaml.safe_load((tmp_path / "validate.report.yaml").read_text())
    assert report["failed"] == 0
    names = [c["name"] for c in report["checks"]]
    assert any("latch: H composed" in n for n in names)
    assert (tmp_path / "validate.manifest.yaml").exists()


def test_validate_fault_injection_fails(tmp_path, capsys):
    assert run(tmp_path, "validate", "--inject-fault") == 1
    assert "FAIL" in capsys.readouterr().out


def test_reduce_rejects_zero_lambda(tmp_path, capsys):
    assert run(tmp_path, "reduce", *SMALL, "--lam", "0") == 2
    assert "lambda" in capsys.readouterr().err


def test_reduce_writes_basis(tmp_path):
    assert run(tmp_path, "reduce", *SMALL, "--lam", "4") == 0
    b = rd.load_basis(tmp_path / "basis.txt")
    assert b.N == 14 and b.d == 6 and b.lam == 4
    assert np.abs(b.T.conj().T @ b.T - np.eye(14)).max() <= 1e-10
    man = yaml.safe_load((tmp_path / "reduce.manifest.yaml").read_text())
    assert man["config"]["N"] == 14 and "versions" in man


def test_reduce_full_dimension_is_identity(tmp_path):
    assert run(tmp_path, "reduce", "-N", "8", "-d", "8", "--lam", "3") == 0
    assert np.array_equal(rd.load_basis(tmp_path / "basis.txt").T, np.eye(8))


def test_unknown_config_key(tmp_path):
    cfg = write_config(tmp_path, N=10, bogus=1)
    assert run(tmp_path, "validate", "--config", cfg) == 2


def test_missing_basis_file(tmp_path):
    assert run(tmp_path, "sweep-steady", "--basis", str(tmp_path / "nope.txt")) == 2


def test_sweep_steady_small(tmp_path):
    cfg = write_config(tmp_path, N=14, d=14, lam=4.0, eps_stop=3.0, eps_step=1.0, compare_max=3.0)
    assert run(tmp_path, "sweep-steady", "--config", cfg) == 0
    rows = (tmp_path / "sweep_steady.csv").read_text().splitlines()
    assert rows[0] == "eps,model,channel,abs_mean"
    assert len(rows) == 1 + 4 * 2 * 2
    zero = [r.split(",") for r in rows[1:] if r.startswith("0.0,")]
    assert all(float(r[3]) == 0.0 for r in zero)
    man = yaml.safe_load((tmp_path / "sweep-steady.manifest.yaml").read_text())
    assert man["results"]["max_rel_dev_transmitted"] < 1e-8


def test_sweep_steady_reports_tolerance_failure(tmp_path):
    cfg = write_config(tmp_path, N=14, d=3, lam=4.0, eps_stop=4.0, eps_step=2.0, compare_max=4.0, rel_tol=1e-6)
    assert run(tmp_path, "sweep-steady", "--config", cfg) == 1


def test_sweep_time_deterministic(tmp_path):
    cfg = write_config(tmp_path, N=8, d=8, sweep_t_end=0.2, dt_out=0.05, method="mcwf", trajectories=4, model="full")
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sweep-time", "--config", cfg, "--out", str(a), "--seed", "5"]) == 0
    assert cli.main(["sweep-time", "--config", cfg, "--out", str(b), "--seed", "5"]) == 0
    ta, tb = (a / "sweep_time_full.csv").read_text(), (b / "sweep_time_full.csv").read_text()
    assert ta == tb
    first = ta.splitlines()[1].split(",")
    assert float(first[0]) == 0.0 and float(first[3]) == 0.0 and float(first[7]) == 0.0


def test_fidelity_curve_full_dimension(tmp_path):
    assert run(tmp_path, "reduce", "-N", "10", "-d", "4", "--lam", "3") == 0
    cfg = write_config(tmp_path, N=10, d=4, d_grid=[4, 10], fidelity_eps=[3.0], basis=str(tmp_path / "basis.txt"))
    assert run(tmp_path, "fidelity-curve", "--config", cfg) == 0
    rows = [r.split(",") for r in (tmp_path / "fidelity_curve.csv").read_text().splitlines()[1:]]
    at_n = [float(r[3]) for r in rows if r[1] == "10"]
    assert len(at_n) == 2 and all(abs(f - 1) < 1e-8 for f in at_n)


def test_gate_sim_small(tmp_path):
    cfg = write_config(tmp_path, N=8, d=8, gate="not", model="full", method="me", dt_out=0.5)
    assert run(tmp_path, "gate-sim", "--config", cfg) == 0
    text = (tmp_path / "gate_not_full.csv").read_text().splitlines()
    assert text[0].startswith("time,eta_re")
    assert len(text) == 1 + 13
