import csv
import json

import pytest

from spikesolve.cli import main
from spikesolve.config import parse_seeds
from spikesolve.errors import ConfigError
from spikesolve.geometry import DiracMeasure


def run(*args):
    return main([str(a) for a in args])


def test_simulate_is_reproducible(tmp_path, capsys):
    assert run("simulate", "--scenario", "sim1d", "--seed", 7, "--out", tmp_path / "a") == 0
    assert run("simulate", "--scenario", "sim1d", "--seed", 7, "--out", tmp_path / "b") == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert {"ground_truth.csv", "acquisition.csv", "scenario.json"} <= set(names)
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len(capsys.readouterr().out.splitlines()) == 6


def test_simulate_sim2d_size(tmp_path):
    assert run("simulate", "--scenario", "sim2d", "--out", tmp_path) == 0
    rows = (tmp_path / "acquisition.csv").read_text().splitlines()
    assert sum(len(r.split(",")) for r in rows) == 16384


def test_unknown_scenario_exit_code(tmp_path, capsys):
    assert run("simulate", "--scenario", "sim9d", "--out", tmp_path) == 2
    assert "UnknownScenario" in capsys.readouterr().err


def test_solve_both_models(tmp_path):
    for model in ("l2", "kl"):
        out = tmp_path / model
        assert run("solve", "--scenario", "sim1d", "--seed", 3, "--model", model, "--lambda", 8.82, "--out", out) == 0
        mu = DiracMeasure.load(out / "spikes.csv")
        trace = json.loads((out / "trace.json").read_text())
        assert trace["n_spikes"] == len(mu) > 0 and trace["lambda"] == 8.82


def test_solve_huge_lambda_is_empty(tmp_path):
    assert run("solve", "--scenario", "sim1d", "--lambda", 1e12, "--out", tmp_path) == 0
    assert len(DiracMeasure.load(tmp_path / "spikes.csv")) == 0
    assert json.loads((tmp_path / "trace.json").read_text())["converged"] is True


def test_kl_without_background_fails(tmp_path):
    assert run("solve", "--scenario", "sim1d", "--lambda", 1, "--background", 0, "--out", tmp_path) == 2
    assert run("solve", "--scenario", "sim1d", "--out", tmp_path) == 2  # no lambda


def test_homotopy_rules(tmp_path, caplog):
    caplog.set_level("INFO")
    assert run("homotopy", "--scenario", "sim1d", "--seed", 2, "--out", tmp_path / "o") == 0
    h = json.loads((tmp_path / "o" / "homotopy.json").read_text())
    sig = [r["sigma"] for r in h["lambda_trace"]]
    assert h["sigma_target_rule"] == "oracle" and h["met_target"]
    assert all(b < a for a, b in zip(sig, sig[1:]))
    assert run("homotopy", "--scenario", "sim2d", "--sigma-target", "bertero", "--out", tmp_path / "b") == 0
    assert json.loads((tmp_path / "b" / "homotopy.json").read_text())["sigma_target"] == 8192
    assert "8192" in caplog.text


def test_homotopy_mask_estimators_on_read_data(tmp_path, caplog):
    caplog.set_level("INFO")
    assert run("simulate", "--scenario", "sim3d", "--out", tmp_path) == 0
    rc = run("homotopy", "--data", tmp_path / "acquisition.raw", "--sigma", 200, 200, 400,
             "--sigma-target", "auto", "--bg-ring", 0.2, "--out", tmp_path / "h")
    assert rc == 0
    assert "estimated background" in caplog.text and "sigma_target (mask)" in caplog.text
    h = json.loads((tmp_path / "h" / "homotopy.json").read_text())
    assert abs(h["background"] - 0.5) < 0.05


def test_metrics_command(tmp_path):
    gt = DiracMeasure([[0.2], [0.5], [0.8]], [1, 1, 1])
    rec = DiracMeasure([[0.21], [0.79], [0.95]], [1, 1, 1])
    gt.save(tmp_path / "gt.csv")
    rec.save(tmp_path / "rec.csv")
    assert run("metrics", "--ground-truth", tmp_path / "gt.csv", "--spikes", tmp_path / "rec.csv", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "metrics.json").read_text())
    assert (rep["tp"], rep["fp"], rep["fn"], rep["jaccard"]) == (2, 1, 1, 0.5)


def test_certdump(tmp_path):
    assert run("certdump", "--scenario", "sim1d", "--out", tmp_path / "start") == 0
    s = json.loads((tmp_path / "start" / "certdump.json").read_text())
    assert s["sup_eta"] == pytest.approx(1 / 0.9, rel=1e-12)
    assert s["field_max"] <= s["sup_eta"] + 1e-12
    assert run("solve", "--scenario", "sim1d", "--lambda", 5, "--out", tmp_path / "s") == 0
    assert json.loads((tmp_path / "s" / "trace.json").read_text())["converged"]
    assert run("certdump", "--scenario", "sim1d", "--lambda", 5, "--spikes", tmp_path / "s" / "spikes.csv",
               "--out", tmp_path / "end") == 0
    assert json.loads((tmp_path / "end" / "certdump.json").read_text())["field_max"] <= 1.01


def test_certdump_on_background_only_data(tmp_path):
    y = tmp_path / "flat.csv"
    y.write_text("0.5\n" * 32)
    assert run("certdump", "--data", y, "--sigma", 2.0, "--background", 0.5, "--lambda", 1, "--out", tmp_path) == 0
    vals = [float(v) for v in (tmp_path / "certificate.csv").read_text().split()]
    assert len(vals) == 128 and all(v == 0 for v in vals)


def test_bench_single_cell_equals_replicate(tmp_path):
    assert run("bench", "--scenario", "sim1d", "--seed", 4, "--lambda", 8.82, "--out", tmp_path) == 0
    rows = list(csv.DictReader((tmp_path / "replicates.csv").open()))
    agg = json.loads((tmp_path / "aggregate.json").read_text())
    for row in rows:
        grp = next(g for g in agg["groups"] if g["model"] == row["model"])
        assert grp["metrics"]["jaccard"]["mean"] == pytest.approx(float(row["jaccard"]), rel=1e-15)
        assert grp["metrics"]["jaccard"]["std"] == 0.0
    assert (tmp_path / "plot_data.csv").exists()


def test_bench_parallel_matches_serial(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": "sim1d", "bench": {"lambdas": [3.0, 8.82], "models": ["kl"], "workers": 2}}))
    monkeypatch.setenv("SPIKESOLVE_THREADS", "1")
    assert run("bench", "--config", cfg, "--seeds", "0..2", "--out", tmp_path / "serial") == 0
    monkeypatch.setenv("SPIKESOLVE_THREADS", "2")
    assert run("bench", "--config", cfg, "--seeds", "0..2", "--out", tmp_path / "pool") == 0
    a = json.loads((tmp_path / "serial" / "aggregate.json").read_text())
    b = json.loads((tmp_path / "pool" / "aggregate.json").read_text())
    assert a["workers"] == 1 and b["workers"] == 2
    assert a["groups"] == [{**g, "metrics": {**g["metrics"], "seconds": a["groups"][i]["metrics"]["seconds"]}}
                           for i, g in enumerate(b["groups"])]


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": "sim1d", "model": "l2", "lambda": 1e12}))
    assert run("solve", "--config", cfg, "--model", "kl", "--out", tmp_path / "o") == 0
    assert json.loads((tmp_path / "o" / "trace.json").read_text())["model"] == "kl"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": "sim1d", "colour": 1}))
    assert run("solve", "--config", bad, "--out", tmp_path) == 2
    assert run("solve", "--config", tmp_path / "missing.json", "--out", tmp_path) == 4


def test_missing_data_file_is_io_error(tmp_path):
    assert run("solve", "--data", tmp_path / "none.csv", "--sigma", 1, "--background", 1,
               "--lambda", 1, "--out", tmp_path) == 4


def test_seed_specs():
    assert parse_seeds("7") == [7]
    assert parse_seeds("0..3") == [0, 1, 2, 3]
    assert parse_seeds("1,4,9") == [1, 4, 9]
    with pytest.raises(ConfigError):
        parse_seeds("5..2")
    with pytest.raises(ConfigError):
        parse_seeds("a..b")


def test_threads_env_must_be_integer(tmp_path, monkeypatch):
    monkeypatch.setenv("SPIKESOLVE_THREADS", "many")
    assert run("bench", "--scenario", "sim1d", "--lambda", 1e12, "--out", tmp_path) == 2
