import math

import numpy as np
import pytest

import cavqsd


def small_config(method="master_zero_t"):
    return {
        "name": "smoke",
        "model": {"n_cavities": 2, "omegas": [1.0, 1.0], "lambdas": [0.5, 0.0],
                  "boundary": "obc", "couplings": [1.0, 1.0], "truncation": 5},
        "bath": {"kernel": {"type": "ou", "gamma": 0.5}, "nbar": 0.0},
        "initial": {"type": "cat", "cavity": 1, "alpha": 0.6},
        "run": {"method": method, "t_max": 1.0, "dt": 0.05, "sample_dt": 0.25},
        "output": {"channels": ["occupation", "fidelity", "negativity", "trace"]},
    }


def test_cat_oracles():
    assert cavqsd.cat_normalization(1.0) == pytest.approx(2 * (1 + math.exp(-2)), abs=1e-12)
    spec = cavqsd.HilbertSpec([30])
    psi = cavqsd.cat_ket(spec, 0, 1.0)
    rho = np.outer(psi, psi.conj())
    f, _ = cavqsd.cat_fidelity(rho, 1.0)
    assert f == pytest.approx(1.0, abs=1e-9)
    assert cavqsd.mode_occupations(spec, rho)[0] == pytest.approx(math.tanh(1.0), abs=1e-9)


def test_vacuum_wigner_and_bell_negativity():
    vac = np.zeros((20, 20), complex)
    vac[0, 0] = 1.0
    assert cavqsd.wigner_point(vac, 0.0) == pytest.approx(2 / math.pi, abs=1e-12)
    xs, ps, w = cavqsd.wigner(vac, 3.0, 41)
    assert w.shape == (len(xs), len(ps))
    spec = cavqsd.HilbertSpec([2, 2])
    bell = (cavqsd.fock_ket(spec, [0, 0]) + cavqsd.fock_ket(spec, [1, 1])) / math.sqrt(2)
    assert cavqsd.pair_negativity(spec, np.outer(bell, bell.conj()), 0, 1) == pytest.approx(0.5, abs=1e-12)


def test_ou_backends_agree():
    model = cavqsd.CavityChainModel([1.0, 1.0], [0.5, 0.0], couplings=[1.0, 1.0])
    fast = cavqsd.ou_coefficients(model, 0.5, 2.0, 200, fast=True)
    slow = cavqsd.ou_coefficients(model, 0.5, 2.0, 200, fast=False)
    assert np.max(np.abs(fast - slow)) < 1e-6


def test_builtins_validate():
    assert "fig1" in cavqsd.builtin_names()
    report = cavqsd.validate("fig5_obc")
    assert report["ok"] and report["runs"] == ["fig5_obc"]


def test_validate_reports_field():
    cfg = small_config("qsd")
    report = cavqsd.validate(cfg)
    assert not report["ok"]
    assert any("run.n_traj" in e for e in report["errors"])


def test_run_small_master():
    (res,) = cavqsd.run(small_config())
    series = res["series"]
    assert len(res["times"]) == 5
    assert np.allclose(series["trace_re"], 1.0, atol=1e-10)
    assert series["n1"][0] == pytest.approx(0.36 * math.tanh(0.36), rel=1e-3)
    assert res["min_eigenvalue"] > -1e-8
    assert res["max_trace_drift"] < 1e-12


def test_run_rejects_bad_config():
    cfg = small_config()
    cfg["run"]["dt"] = -1.0
    with pytest.raises(cavqsd.ConfigError):
        cavqsd.run(cfg)


def test_qsd_is_seed_deterministic():
    cfg = small_config("qsd")
    cfg["run"].update({"n_traj": 40, "seed": 7})
    a = cavqsd.run(cfg, threads=1)[0]["series"]["n1"]
    b = cavqsd.run(cfg, threads=2)[0]["series"]["n1"]
    assert a == b
