import json
from pathlib import Path

import pytest

from adapted_ot.cli import main
from adapted_ot.model import DiscretePathMeasure


def test_simulate_writes_csv_and_sidecar(tmp_path):
    out = tmp_path / "paths.csv"
    code = main(["simulate", "--drift", "kind=ou theta=1", "--vol",
                 "kind=constant value=1", "--n-steps", "8", "--samples", "3",
                 "--seed", "5", "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "replicate,t,value"
    assert len(lines) == 1 + 3 * 9
    sidecar = json.loads(Path(str(out) + ".sidecar.json").read_text())
    assert sidecar["command"] == "simulate"
    assert sidecar["config"]["seed"] == 5


def test_lattice_and_aw_distance_roundtrip(tmp_path):
    lat = tmp_path / "lx.json"
    assert main(["lattice", "--drift", "kind=ou theta=1", "--vol",
                 "kind=constant value=1", "--n-steps", "3", "--atoms", "3",
                 "--max-support", "27", "--out", str(lat)]) == 0
    result = tmp_path / "aw.json"
    assert main(["aw-distance", "--lattice-x", str(lat), "--lattice-y",
                 str(lat), "--p", "2", "--out", str(result)]) == 0
    data = json.loads(result.read_text())
    assert data["value"] == pytest.approx(0.0, abs=1e-12)
    assert data["fosd_x"] and data["fosd_y"]
    assert data["policy_size"] > 0


def test_metrics_on_example_trees(tmp_path):
    mu = DiscretePathMeasure(paths=[[0.5, 1.0], [-0.5, -1.0]],
                             weights=[0.5, 0.5])
    nu = DiscretePathMeasure(paths=[[0.0, 1.0], [0.0, -1.0]],
                             weights=[0.5, 0.5])
    mu_path = tmp_path / "mu.json"
    nu_path = tmp_path / "nu.json"
    mu_path.write_text(mu.to_json())
    nu_path.write_text(nu.to_json())
    out = tmp_path / "metrics.json"
    assert main(["metrics", "--tree-mu", str(mu_path), "--tree-nu",
                 str(nu_path), "--p", "2", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["aw"] == pytest.approx(2.25, abs=1e-10)
    assert data["w"] == pytest.approx(0.25, abs=1e-10)
    assert data["aw"] >= data["scw"] >= data["w"]


def test_rho_scan_rerun_reproduces_bytes(tmp_path):
    out = tmp_path / "scan.csv"
    args = ["rho-scan", "--preset", "vol-gap", "--rhos=-1,0,1",
            "--n-steps", "8", "--samples", "400", "--seed", "9",
            "--out", str(out)]
    assert main(args) == 0
    first = out.read_bytes()
    sidecar = str(out) + ".sidecar.json"
    assert main(["rerun", sidecar]) == 0
    assert out.read_bytes() == first


def test_convergence_csv_schema(tmp_path):
    out = tmp_path / "conv.csv"
    assert main(["convergence", "--preset", "drift-gap", "--n-list", "2,4",
                 "--atoms", "3", "--max-support", "20", "--samples", "500",
                 "--seed", "2", "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0]
    assert header == "N,h,dp_scaled,kr_cost,mc_sync,mc_stderr"


def test_counterexample_csv(tmp_path):
    out = tmp_path / "ce.csv"
    assert main(["counterexample", "--samples", "500", "--n-steps", "20",
                 "--out", str(out)]) == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "coupling,estimate,stderr"
    sync_row = rows[1].split(",")
    assert sync_row[0] == "sync"
    assert float(sync_row[1]) == pytest.approx(24.3, abs=1e-9)


def test_config_errors_exit_2(tmp_path):
    assert main(["rho-scan", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["metrics", "--tree-mu", "missing.json", "--tree-nu",
                 "missing.json"]) == 2
    assert main(["simulate", "--drift", "kind=warp", "--vol",
                 "kind=constant value=1", "--n-steps", "4",
                 "--out", str(tmp_path / "y.csv")]) == 2


def test_divergence_exit_3(tmp_path):
    out = tmp_path / "div.csv"
    code = main(["rho-scan", "--drift", "kind=affine intercept=0 slope=240",
                 "--vol", "kind=constant value=1", "--drift-y",
                 "kind=constant value=0", "--vol-y", "kind=constant value=1",
                 "--rhos", "1", "--n-steps", "8", "--samples", "200",
                 "--seed", "0", "--out", str(out)])
    assert code == 3
