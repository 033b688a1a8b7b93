"""Tests for the experiment harness, report persistence, and the CLI."""

import json
import math

import numpy as np
import pytest

from bll import cli
from bll.harness import (REPORT_COLUMNS, ConvergenceReport, ExperimentConfig,
                         emit_report, load_report, run_convergence,
                         run_formula_suite)


def test_formula_suite_all_green():
    report = run_formula_suite()
    assert report["ok"]
    assert len(report["checks"]) >= 15
    for c in report["checks"]:
        assert set(c) == {"name", "value", "tolerance", "ok"}


def test_formula_suite_detects_injected_fault():
    # perturbing one scaled coefficient must break the no-slip check
    report = run_formula_suite(fault_delta1=1e-6)
    assert not report["ok"]
    failing = [c["name"] for c in report["checks"] if not c["ok"]]
    assert "scaled corrector inner no-slip" in failing


def test_config_hash_stable_and_sensitive():
    a = ExperimentConfig()
    b = ExperimentConfig()
    assert a.config_hash() == b.config_hash()
    c = ExperimentConfig(nu=2.0)
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 16


def test_config_validation_errors():
    with pytest.raises(ValueError):
        ExperimentConfig(n_list=(0,)).validate()
    with pytest.raises(ValueError):
        ExperimentConfig(method="spectral").validate()
    with pytest.raises(ValueError):
        ExperimentConfig(rho="nope").validate()


def synthetic_report(out_dir):
    cfg = ExperimentConfig(n_list=(8, 27), seeds=(0,), out_dir=out_dir)
    rows = []
    for n, err in ((8, 0.5), (27, 0.25)):
        row = {c: "" for c in REPORT_COLUMNS}
        row.update({"n": n, "seed": 0, "eps": 1.0 / n, "method": "mor",
                    "rel_l2_error": err, "source_pairing": 20.0,
                    "source_limit": 19.0, "friction_pairing": -1.0,
                    "friction_limit": -1.1, "status": "ok", "error": ""})
        rows.append(row)
    return ConvergenceReport(config=cfg, rows=rows,
                             metadata={"config_hash": cfg.config_hash()})


def test_emit_and_load_roundtrip(tmp_path):
    report = synthetic_report(str(tmp_path))
    files = emit_report(report)
    names = {f.split("/")[-1] for f in files}
    assert {"report.csv", "report.json"} <= names
    back = load_report(str(tmp_path / "report.json"))
    assert back.config == report.config
    assert back.rows == report.rows
    assert back.metadata["config_hash"] == report.config.config_hash()


def test_csv_is_deterministic(tmp_path):
    report = synthetic_report(str(tmp_path))
    emit_report(report)
    first = (tmp_path / "report.csv").read_bytes()
    emit_report(report)
    assert (tmp_path / "report.csv").read_bytes() == first
    header = first.decode().splitlines()[0]
    assert header == ",".join(REPORT_COLUMNS)


def test_median_errors():
    report = synthetic_report("unused")
    med = report.median_errors()
    assert med == {8: 0.5, 27: 0.25}


def test_plot_series_files(tmp_path):
    report = synthetic_report(str(tmp_path))
    emit_report(report)
    data = (tmp_path / "plots" / "rel_error.dat").read_text().split()
    assert float(data[1]) == 0.5
    assert float(data[3]) == 0.25


def test_tiny_convergence_run(tmp_path):
    cfg = ExperimentConfig(n_list=(8,), seeds=(0,), method="mor",
                           h_limit=0.25, out_dir=str(tmp_path))
    report = run_convergence(cfg)
    assert len(report.rows) == 1
    row = report.rows[0]
    assert row["status"] == "ok"
    assert row["rel_l2_error"] > 0
    assert row["mor_reflections"] >= 1
    assert math.isfinite(row["source_pairing"])
    assert report.metadata["config_hash"] == cfg.config_hash()


def test_cli_verify_exit_codes():
    assert cli.main(["verify"]) == 0
    assert cli.main(["verify", "--fault-delta1", "1e-6"]) == 1


def test_cli_gen_cloud_and_solve(tmp_path, capsys):
    cloud_path = str(tmp_path / "c.json")
    assert cli.main(["gen-cloud", "--n", "8", "--seed", "1",
                     "--out", cloud_path]) == 0
    out_path = str(tmp_path / "sol.json")
    assert cli.main(["solve", "--cloud", cloud_path, "--method", "mor",
                     "--h", "0.25", "--out", out_path]) == 0
    with open(out_path) as fh:
        dump = json.load(fh)
    assert len(dump["strengths"]) == 8
    assert dump["mismatch"] < 1.0


def test_cli_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"method": "warp-drive"}))
    assert cli.main(["converge", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"unknown_key": 1}))
    assert cli.main(["converge", "--config", str(bad)]) == 2
    assert cli.main(["gen-cloud", "--n", "8", "--rho", "nope",
                     "--out", str(tmp_path / "x.json")]) == 2


def test_cli_limit_and_report(tmp_path, monkeypatch):
    monkeypatch.setenv("BLL_OUT", str(tmp_path))
    snap = str(tmp_path / "limit")
    assert cli.main(["limit", "--h", "0.25", "--out", snap]) == 0
    report = synthetic_report(str(tmp_path / "rep"))
    emit_report(report, out_dir=str(tmp_path / "rep"))
    assert cli.main(["report", "--in", str(tmp_path / "rep" / "report.json"),
                     "--format", "csv"]) == 0
