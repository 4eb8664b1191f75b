import json
import math

import numpy as np
import pytest

from vpme.experiments import (Scenario, ScenarioError, emit, initial_ensemble, load_scenario,
                              run_dirac_limit, run_quasineutral_sweep, run_stability_pair)

SMALL = {"n_particles": 256, "n": 32, "t_final": 0.1, "snapshot_dt": 0.05}


def scenario(**kw):
    d = {"name": "t", "eps": [0.5], "solver": dict(SMALL), "reference": {"n": 32, "dt": 0.01}}
    d.update(kw)
    return Scenario.from_dict(d)


def test_scenario_validation(tmp_path):
    for bad in ({"eps": []}, {"eps": [0.0]}, {"eps": [1.5]}, {"initial": {"family": "boxcar"}},
                {"initial": {"family": "file", "path": str(tmp_path / "missing.csv")}},
                {"outputs": ["xml"]}, {"bogus": 1}):
        with pytest.raises(ScenarioError):
            scenario(**bad)
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"name": "x"})


def test_load_scenario(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text('name = "demo"\neps = [0.4, 0.2]\n[solver]\nn = 64\n')
    sc = load_scenario(p)
    assert sc.name == "demo" and sc.eps == [0.4, 0.2] and sc.solver["n"] == 64
    (tmp_path / "bad.toml").write_text("eps = [")
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "bad.toml")
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "nope.toml")


def test_two_bump_initial_data():
    sc = scenario(initial={"family": "two-bump", "separation": 1.0, "sigma": 0.2, "amplitude": 0.0})
    ens = initial_ensemble(sc, 0.5)
    assert abs(np.mean(ens.v)) < 1e-3
    assert np.mean(np.abs(ens.v)) == pytest.approx(1.0, abs=0.02)


def test_single_eps_sweep_has_one_summary_entry():
    rep = run_quasineutral_sweep(scenario())
    assert rep["summary"]["sup_w1"][0] is not None and len(rep["summary"]["sup_w1"]) == 1
    assert rep["summary"]["trend_as_eps_decreases"] == "n/a"
    assert {r["eps"] for r in rep["rows"]} == {0.5} and len(rep["rows"]) == 3


def test_stationary_sweep_is_at_noise_floor():
    rep = run_quasineutral_sweep(scenario(eps=[0.5, 0.25], initial={"amplitude": 0.0}))
    assert max(rep["summary"]["sup_w1"]) < 1e-6


def test_failed_eps_is_isolated():
    rep = run_quasineutral_sweep(scenario(eps=[0.5, 0.01]))
    assert "0.01" in rep["summary"]["errors"]
    assert rep["summary"]["sup_w1"][0] is not None and rep["summary"]["sup_w1"][1] is None
    assert all(r["eps"] == 0.5 for r in rep["rows"])


def test_cold_uniform_dirac_limit_is_quiet():
    rep = run_dirac_limit(scenario(initial={"amplitude": 0.0, "entropy_constant": 0.0}, eps=[0.5, 0.25]))
    assert all(t["sup_w1"] < 1e-6 for t in rep["summary"]["table"])


def test_stability_pair_variants():
    sc = scenario(eps=[1.0], solver={**SMALL, "dt": 0.01},
                  initial={"family": "cosine", "amplitude": 0.2, "thermal_speed": 0.5})
    zero = run_stability_pair(sc, {"kind": "none"})
    assert all(r["coupling_cost"] == 0 for r in zero["rows"])
    kick = run_stability_pair(sc, {"kind": "velocity-kick", "size": 1e-3})
    assert kick["summary"]["violations"] == 0
    assert kick["rows"][0]["w1_exact"] == pytest.approx(1e-3, rel=1e-9)
    osc = run_stability_pair(sc, {"kind": "oscillatory", "wavenumber": 200.0})
    s = osc["summary"]
    assert s["l1_perturbation"] > 0.3
    assert s["w1_initial"] < 0.1 * s["l1_perturbation"]
    with pytest.raises(ScenarioError):
        run_stability_pair(sc, {"kind": "tickle"})


def test_emit_formats(tmp_path):
    empty = {"name": "empty", "columns": ["eps", "t", "w1"], "rows": []}
    p = emit(empty, "csv", tmp_path)
    assert open(p).read() == "eps,t,w1\n"
    rep = run_quasineutral_sweep(scenario())
    p_csv = emit(rep, "csv", tmp_path)
    assert len(open(p_csv).read().splitlines()) == 1 + len(rep["rows"])
    p_json = emit(rep, "json", tmp_path)
    assert json.load(open(p_json)) == rep
    with pytest.raises(ValueError):
        emit(rep, "yaml", tmp_path)


def test_reports_are_byte_identical(tmp_path):
    a = emit(run_quasineutral_sweep(scenario()), "json", tmp_path / "a")
    b = emit(run_quasineutral_sweep(scenario()), "json", tmp_path / "b")
    assert open(a, "rb").read() == open(b, "rb").read()


def test_worker_pool_matches_serial():
    serial = run_quasineutral_sweep(scenario(eps=[0.5, 0.25]))
    pooled = run_quasineutral_sweep(scenario(eps=[0.5, 0.25], workers=2))
    assert serial == pooled
