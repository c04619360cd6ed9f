import csv
import json
import os
import subprocess

import pytest

CLI = os.environ.get("CAVQSD_CLI")
pytestmark = pytest.mark.skipif(not CLI, reason="CAVQSD_CLI not set")


def cli(*args, env=None):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, env=env)


def write_config(path, **run):
    cfg = {
        "name": "cli",
        "model": {"n_cavities": 2, "omegas": [1.0, 1.0], "lambdas": [0.5, 0.0],
                  "boundary": "obc", "couplings": [1.0, 1.0], "truncation": 4},
        "bath": {"kernel": {"type": "ou", "gamma": 0.5}, "nbar": 0.0},
        "initial": {"type": "coherent", "cavity": 1, "alpha": 0.5},
        "run": {"method": "master_zero_t", "t_max": 1.0, "dt": 0.05, "sample_dt": 0.25, **run},
        "output": {"write_rho": True},
    }
    path.write_text(json.dumps(cfg))
    return path


def test_validate_builtin():
    r = cli("validate", "fig5_obc")
    assert r.returncode == 0
    assert "ok" in r.stdout


def test_validate_error_exit_code(tmp_path):
    cfg = write_config(tmp_path / "bad.json", method="qsd")
    r = cli("validate", cfg)
    assert r.returncode == 2
    assert "run.n_traj" in r.stdout + r.stderr


def test_malformed_json_exit_code(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{\n  \"name\": \n")
    assert cli("validate", p).returncode == 2
    assert cli("simulate", p, "--out", tmp_path).returncode == 2


def test_simulate_and_compare(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    r = cli("simulate", cfg, "--out", tmp_path / "out", "--threads", 1)
    assert r.returncode == 0, r.stderr
    run_dir = tmp_path / "out" / "cli"
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["method"] == "master_zero_t"
    with open(run_dir / "observables.csv") as f:
        rows = list(csv.reader(f))
    assert len(rows) == 1 + 5
    for metric in ("channel", "trace_distance"):
        r = cli("compare", run_dir, run_dir, "--metric", metric)
        assert r.returncode == 0, r.stderr


def test_output_root_from_environment(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    env = dict(os.environ, CAVQSD_OUTPUT_ROOT=str(tmp_path / "envroot"))
    assert cli("simulate", cfg, env=env).returncode == 0
    assert (tmp_path / "envroot" / "cli" / "manifest.json").exists()
