import csv

import numpy as np
import pytest

from cellfree import cli
from cellfree.cli import (ExperimentSpec, ConfigError, main, parse_config_text,
                          parse_overrides, run_cdf_experiment, run_experiment, sim_config_from)
from cellfree.errors import ConditioningAlarm
from cellfree.montecarlo import SimConfig

TINY = ["--sim.n_user_topologies", "2", "--sim.n_antenna_topologies", "2",
        "--sim.n_small_scale", "10"]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_text_parsing():
    flat = parse_config_text("# comment\nsim.L = 300\n\nsim.rho_u_db=-10  # inline\n")
    assert flat == {"sim.L": "300", "sim.rho_u_db": "-10"}
    with pytest.raises(ConfigError):
        parse_config_text("sim.L 300")


def test_overrides():
    assert parse_overrides(["--sim.L", "5", "--sim.K=2"]) == {"sim.L": "5", "sim.K": "2"}
    with pytest.raises(ConfigError):
        parse_overrides(["--bogus"])


def test_sim_config_types(monkeypatch):
    monkeypatch.delenv("CELLFREE_SEED", raising=False)
    cfg = sim_config_from({"sim.L": "120", "sim.alpha": "3", "sim.csi": "imperfect"})
    assert cfg.L == 120 and cfg.alpha == 3.0 and cfg.csi == "imperfect"
    with pytest.raises(ConfigError):
        sim_config_from({"sim.L": "many"})
    with pytest.raises(ConfigError):
        sim_config_from({"sim.nope": "1"})


def test_env_seed(monkeypatch):
    monkeypatch.setenv("CELLFREE_SEED", "1234")
    assert sim_config_from({"sim.master_seed": "1"}).master_seed == 1234
    monkeypatch.setenv("CELLFREE_SEED", "x")
    with pytest.raises(ConfigError):
        sim_config_from({})


def test_config_file_and_flag_precedence(tmp_path, monkeypatch):
    monkeypatch.delenv("CELLFREE_SEED", raising=False)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("sim.L=30\nsim.K=3\nsim.n_user_topologies=1\nsim.n_antenna_topologies=1\n"
                   "sim.n_small_scale=5\n")
    out = tmp_path / "r.csv"
    assert main(["rates", "--config", str(cfg), "--sim.L", "25", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert {r["L"] for r in rows} == {"25"}
    assert [r["metric"] for r in rows] == ["sim_rate", "approx_ub", "approx_lb",
                                           "rae_ub_pct", "rae_lb_pct"]


def test_exit_code_config_error(tmp_path, capsys):
    assert main(["rates", "--sim.L", "3", "--sim.K", "4"]) == 2
    assert main(["rates", "--sim.whatever", "1"]) == 2
    assert main(["rates", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert "config error" in capsys.readouterr().err


def test_exit_code_numerical_failure(tmp_path, monkeypatch):
    def boom(config):
        raise ConditioningAlarm("too many rejections")
    monkeypatch.setattr(cli, "average_over_topologies", boom)
    assert main(["rates", "--sim.L", "20", "--sim.K", "2"]) == 3
    spec = ExperimentSpec("x", SimConfig(L=20, K=2), [("L", [20, 30])], tmp_path)
    assert run_experiment(spec) == 3
    assert (tmp_path / "x.csv.partial").exists()
    assert not (tmp_path / "x.csv").exists()
    assert "meta.complete=0" in (tmp_path / "x.manifest").read_text()


def test_topology_command(tmp_path):
    assert main(["topology", "--sim.L", "6", "--sim.K", "2", "--out", str(tmp_path / "t.csv"),
                 "--gamma-out", str(tmp_path / "g.csv")]) == 0
    rows = read_rows(tmp_path / "t.csv")
    assert sum(r["role"] == "antenna" for r in rows) == 6
    assert len(read_rows(tmp_path / "g.csv")) == 12


def test_approx_command(tmp_path):
    out = tmp_path / "a.csv"
    assert main(["approx", "--sim.L", "30", "--sim.K", "3", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert list(rows[0]) == cli.APPROX_HEADER
    assert len(rows) == 12
    assert main(["approx", "--sim.L", "30", "--sim.K", "3", "--sim.mode", "colocated",
                 "--out", str(out)]) == 0
    assert {r["colocated"] for r in read_rows(out)} == {"1"}


def test_asymptotics_command(tmp_path):
    out = tmp_path / "q.csv"
    assert main(["asymptotics", "--l", "1", "--L-values", "100,200", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert list(rows[0]) == cli.ASYMPTOTICS_HEADER
    q = [float(r["q_numeric"]) for r in rows]
    assert q[0] > q[1] > 0
    assert main(["asymptotics", "--l", "95", "--L-values", "100"]) == 2


def test_reproduce_fig2a(tmp_path):
    out = tmp_path / "res"
    argv = ["reproduce", "fig2a", "--fast", "--out", str(out), "--sweep.L=150,200"] + TINY
    assert main(argv) == 0
    rows = read_rows(out / "fig2a.csv")
    metrics = {(r["mode"], r["metric"]) for r in rows}
    assert ("cellfree", "approx_ub") in metrics and ("colocated", "coloc_lb") in metrics
    assert {r["L"] for r in rows} == {"150", "200"}
    assert len(list((out / "points").glob("*.csv"))) == len(rows)
    manifest = (out / "fig2a.manifest").read_text()
    for key in ("sim.master_seed=", "meta.version=", "meta.wall_time_s=", "meta.fast=1",
                "meta.L_grid=", "sweep.L=150,200"):
        assert key in manifest
    assert "plot" in (out / "fig2a.gp").read_text()


def test_manifest_reproduces_run(tmp_path):
    out = tmp_path / "a"
    assert main(["reproduce", "table1", "--alpha", "4", "--out", str(out),
                 "--sweep.L=20,30", "--sim.K=3"] + TINY) == 0
    rerun = tmp_path / "b"
    assert main(["reproduce", "table1", "--config", str(out / "table1.manifest"),
                 "--out", str(rerun)]) == 0
    assert (out / "table1.csv").read_bytes() == (rerun / "table1.csv").read_bytes()
    rows = read_rows(out / "table1.csv")
    assert {r["metric"] for r in rows} == {"rae_ub_pct"}
    assert {r["csi"] for r in rows} == {"perfect", "imperfect"}


def test_cdf_experiment_bytes_stable(tmp_path):
    for d in ("a", "b"):
        assert main(["reproduce", "fig3a", "--out", str(tmp_path / d), "--sim.L=40",
                     "--sim.K=3"] + TINY) == 0
    a = (tmp_path / "a" / "fig3a.csv").read_bytes()
    assert a == (tmp_path / "b" / "fig3a.csv").read_bytes()
    rows = read_rows(tmp_path / "a" / "fig3a.csv")
    sim = [float(r["value"]) for r in rows if r["series"] == "sim" and r["mode"] == "cellfree"]
    assert sim == sorted(sim) and len(sim) == 4


def test_cdf_single_realization_is_step(tmp_path):
    cfg = SimConfig(L=20, K=2, n_user_topologies=1, n_antenna_topologies=1, n_small_scale=5)
    spec = ExperimentSpec("cdf", cfg, [], tmp_path)
    assert run_cdf_experiment(spec) == 0
    rows = read_rows(tmp_path / "cdf.csv")
    assert len(rows) == 3
    assert all(float(r["cdf"]) == 1.0 for r in rows)


def test_invalid_sweep_rejected(tmp_path):
    spec = ExperimentSpec("bad", SimConfig(L=20, K=2), [("nope", [1])], tmp_path)
    assert run_experiment(spec) == 2
    spec = ExperimentSpec("bad", SimConfig(L=20, K=2), [("L", [1])], tmp_path)
    assert run_experiment(spec) == 2


def test_perfect_runs_shared_across_pilot_sweep(tmp_path, monkeypatch):
    calls = []
    real = cli.average_over_topologies
    monkeypatch.setattr(cli, "average_over_topologies", lambda c: calls.append(c) or real(c))
    cfg = SimConfig(L=20, K=2, n_user_topologies=1, n_antenna_topologies=1, n_small_scale=5)
    spec = ExperimentSpec("p", cfg, [("csi", ["perfect", "imperfect"]), ("rho_p_db", [0.0, 10.0])],
                          tmp_path)
    assert run_experiment(spec) == 0
    assert len(calls) == 3
    rows = read_rows(tmp_path / "p.csv")
    perfect = [r["value"] for r in rows if r["csi"] == "perfect" and r["metric"] == "sim_rate"]
    assert perfect[0] == perfect[1]
