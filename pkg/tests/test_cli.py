import json
import shutil
from pathlib import Path

import pytest

from lagcns.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(tmp_path, command, config, *extra, out="out"):
    dest = tmp_path / out
    status = main([command, str(CONFIGS / config), "--out", str(dest), *extra])
    return status, dest


def test_verify_transform_identity_flow(tmp_path):
    status, out = run(tmp_path, "verify-transform", "verify_identity.yaml")
    assert status == 0
    rows = (out / "transform.csv").read_text().splitlines()
    assert rows[0] == "flow,dim,identity,N,error,ratio"
    assert all(float(r.split(",")[4]) < 1e-12 for r in rows[1:])
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["exit_status"] == 0 and "timestamp" in meta


def test_contraction_csv_columns(tmp_path):
    status, out = run(tmp_path, "contraction", "contraction.yaml")
    assert status == 0
    lines = (out / "contraction.csv").read_text().splitlines()
    assert lines[0] == "T,kappa,pair"
    assert sum(1 for line in lines if line.endswith(",max")) == 4


def test_decay_summary_matches_csv(tmp_path):
    status, out = run(tmp_path, "decay", "decay.yaml")
    assert status == 0
    footer = dict(line[2:].split("=", 1) for line in (out / "decay.csv").read_text().splitlines() if line.startswith("# "))
    summary = (out / "summary.txt").read_text()
    assert float(footer["gamma_fit"]) > 0
    assert f"gamma_fit (log-linear slope over the second half): {footer['gamma_fit']}" in summary
    assert f"fit residual (rms in log space): {footer['residual']}" in summary


def test_out_of_regime_exits_with_trace(tmp_path):
    status, out = run(tmp_path, "solve-global", "global_out_of_regime.yaml")
    assert status == 5
    trace = json.loads((out / "trace.json").read_text())
    assert trace and "error" in trace[-1]


def test_config_error_exit(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("norms: {p: 3, q: 4}\n")
    assert main(["solve-local", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_degenerate_flow_exit(tmp_path):
    cfg = tmp_path / "squeeze.yaml"
    cfg.write_text("grid: {dim: 2, extents: [9, 9]}\ntime: {T: 2.0, nsteps: 20}\n"
                   "motion: {family: radial_dilation, amplitude: -0.6}\ninitial: {family: perturbed, amplitude: 0.0}\n"
                   "picard: {L: 100.0}\n")
    assert main(["solve-local", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_solve_local_outputs_and_rhs_dump(tmp_path):
    status, out = run(tmp_path, "solve-local", "local_perturbed.yaml", "--dump-rhs-terms")
    assert status == 0
    for name in ("norms.json", "picard.csv", "steps.csv", "mass.csv", "rho_final.csv", "u_final.csv",
                 "rhs_terms/F.csv", "rhs_terms/G.csv", "summary.txt"):
        assert (out / name).exists(), name
    assert (out / "steps.csv").read_text().splitlines()[0] == "step,residual,eta_min,eta_max,u_max"
    assert len((out / "steps.csv").read_text().splitlines()) == 21


def test_empty_study_says_no_measurements(tmp_path):
    cfg = tmp_path / "empty.yaml"
    cfg.write_text("verify: {flows: [], dims: [1]}\n")
    assert main(["verify-transform", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "no measurements" in (tmp_path / "o" / "summary.txt").read_text()


def test_output_dir_relative_to_config(tmp_path):
    shutil.copy(CONFIGS / "verify_identity.yaml", tmp_path / "v.yaml")
    assert main(["verify-transform", str(tmp_path / "v.yaml")]) == 0
    assert (tmp_path / "out" / "verify_identity" / "transform.csv").exists()


@pytest.mark.parametrize("command,config", [("solve-local", "local_perturbed.yaml"), ("contraction", "contraction.yaml"),
                                            ("decay", "decay.yaml")])
def test_reports_are_deterministic(tmp_path, monkeypatch, command, config):
    _, a = run(tmp_path, command, config, out="a")
    monkeypatch.setenv("LAGCNS_THREADS", "3")
    _, b = run(tmp_path, command, config, out="b")
    names = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "metadata.json")
    assert names == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file() and p.name != "metadata.json")
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
