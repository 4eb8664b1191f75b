"""Acceptance suite: one test per primary criterion, each printing PASS/FAIL.

Run with pytest (the lines are collected in the terminal summary) or
directly with ``python3 tests/test_acceptance.py``.
"""
import math
import time

import numpy as np
import pytest
from scipy import optimize

from vpme import diagnostics as diag
from vpme.dynamics import SimulationConfig, run
from vpme.experiments import Scenario, run_dirac_limit, run_quasineutral_sweep, run_stability_pair
from vpme.fluid import FluidState, dt_cap, integrate_fluid
from vpme.measures import ParticleEnsemble, grid_nodes, sample
from vpme.poisson import PoissonOptions, solve_full
from vpme.transport import coupling_cost, w1_bruteforce, w1_exact, w1_rescaling_check

from conftest import ACCEPTANCE
from helpers import SHAPES, manufactured, random_density


def report(num, ok, detail, elapsed, budget):
    within = elapsed <= budget
    line = f"{detail}; {elapsed:.1f} s (budget {budget:g} s)"
    ACCEPTANCE.append((num, bool(ok and within), line))
    print(f"criterion {num}: {'PASS' if ok and within else 'FAIL'}  {line}")
    assert ok, detail
    assert within, f"runtime {elapsed:.1f} s over budget {budget} s"


def test_criterion_01_manufactured_convergence():
    t0 = time.perf_counter()
    grids = [128, 256, 512, 1024]
    orders = {}
    for shape in SHAPES:
        for eps in (1.0, 0.5, 0.25):
            errs = []
            for n in grids:
                rho, u = manufactured(shape, eps, n)
                errs.append(np.max(np.abs(solve_full(rho, eps).U_total.values - u)))
            orders[(shape, eps)] = -np.polyfit(np.log(grids), np.log(errs), 1)[0]
    worst = min(orders.values())
    report(1, worst >= 1.9, f"min fitted order {worst:.3f} over 5 profiles x 3 eps",
           time.perf_counter() - t0, 10)


def test_criterion_02_correction_bounds():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240602)
    violations, worst = 0, [0.0, 0.0, 0.0]
    for _ in range(100):
        rho = random_density(rng, 256)
        for eps in (1.0, 0.5, 0.25):
            b = solve_full(rho, eps, rescaled=True).bounds
            violations += not b["holds"]
            worst = [max(worst[0], b["sup_U_hat"]), max(worst[1], b["sup_dU_hat"]),
                     max(worst[2], b["sup_d2U_hat"] * eps**2)]
    report(2, violations == 0,
           f"{violations} violations; max |U^|={worst[0]:.3f}, |U^'|={worst[1]:.3f}, "
           f"eps^2|U^''|={worst[2]:.3f}", time.perf_counter() - t0, 30)


def test_criterion_03_w1_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_gap, bad_coupling = 0.0, 0
    for _ in range(200):
        n = int(rng.integers(1, 8))
        a = ParticleEnsemble.uniform(rng.uniform(-0.5, 0.5, n), rng.normal(0, 1, n))
        b = ParticleEnsemble.uniform(rng.uniform(-0.5, 0.5, n), rng.normal(0, 1, n))
        exact = w1_exact(a, b)[0]
        worst_gap = max(worst_gap, abs(exact - w1_bruteforce(a, b)))
        bad_coupling += coupling_cost(a, b) < exact - 1e-15
    report(3, worst_gap <= 1e-12 and bad_coupling == 0,
           f"max |exact - brute force| = {worst_gap:.1e}, coupling below exact: {bad_coupling}",
           time.perf_counter() - t0, 20)


def test_criterion_04_stability_inequality():
    t0 = time.perf_counter()
    sizes = np.geomspace(1e-4, 1e-2, 20)
    violations, w1_0, margin = 0, [], math.inf
    for k, size in enumerate(sizes):
        sc = Scenario.from_dict({
            "name": "stability", "eps": [1.0], "seed": 100 + k,
            "initial": {"family": "cosine", "amplitude": 0.2, "thermal_speed": 1.0},
            "solver": {"n_particles": 10**4, "n": 256, "t_final": 0.5, "dt": 0.002,
                       "snapshot_dt": 0.05},
            "perturbation": {"kind": "velocity-kick", "size": float(size),
                             "profile": "constant" if k % 2 else "random"},
        })
        rep = run_stability_pair(sc)
        violations += rep["summary"]["violations"]
        w1_0.append(rep["summary"]["w1_initial"])
        for r in rep["rows"][1:]:
            margin = min(margin, r["gronwall_bound_log"] - r["log_w1"])
    in_range = all(1e-4 * (1 - 1e-9) <= w <= 1e-2 * (1 + 1e-9) for w in w1_0)
    report(4, violations == 0 and in_range,
           f"{violations} violations over 20 pairs x 11 snapshots; W1(0) in "
           f"[{min(w1_0):.1e}, {max(w1_0):.1e}]; smallest log-margin {margin:.1f}",
           time.perf_counter() - t0, 180)


def test_criterion_05_scaling_sandwich():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = math.inf
    for k in range(50):
        n = int(rng.integers(5, 120))
        if k % 5 == 0:
            m = int(rng.integers(3, 40))
            wa, wb = rng.uniform(0.1, 1, n), rng.uniform(0.1, 1, m)
            a = ParticleEnsemble(rng.uniform(-0.5, 0.5, n), rng.normal(0, 2, n), wa / wa.sum())
            b = ParticleEnsemble(rng.uniform(-0.5, 0.5, m), rng.normal(0, 2, m), wb / wb.sum())
        else:
            a = ParticleEnsemble.uniform(rng.uniform(-0.5, 0.5, n), rng.normal(0, 2, n))
            b = ParticleEnsemble.uniform(rng.uniform(-0.5, 0.5, n), rng.normal(0.5, 1, n))
        for eps in (0.25, 0.5, 1.0):
            lhs, mid, rhs = w1_rescaling_check(a, b, eps, slack=math.inf)
            worst = min(worst, mid - lhs, rhs - mid)
    report(5, worst >= -1e-10, f"minimum slack {worst:.2e}", time.perf_counter() - t0, 30)


def test_criterion_06_energy_conservation():
    t0 = time.perf_counter()
    ens = sample(lambda x: 1 + 0.2 * np.cos(2 * np.pi * x), 10**4, thermal_speed=1.0)
    steps = [2e-3, 1e-3, 5e-4, 2.5e-4]
    drift = []
    for dt in steps:
        traj = run(ens, SimulationConfig(eps=1.0, dt=dt, t_final=1.0, n=256, snapshot_every=10**9))
        e = np.array([r.energy for r in traj.records])
        drift.append(float(np.max(np.abs(e - e[0])) / e[0]))
    order = float(np.polyfit(np.log(steps), np.log(drift), 1)[0])
    d_ref = drift[1]
    ratios = ", ".join(f"{drift[i] / drift[i + 1]:.2f}" for i in range(len(drift) - 1))
    report(6, d_ref <= 1e-3 and 1.8 <= order <= 2.5,
           f"drift {d_ref:.2e} at dt=1e-3; halving ratios {ratios}; fitted order {order:.2f}",
           time.perf_counter() - t0, 120)


def test_criterion_07_quasineutral_trend():
    t0 = time.perf_counter()
    sc = Scenario.from_dict({"name": "qn", "eps": [0.4, 0.2, 0.1],
                             "initial": {"family": "cosine", "amplitude": 0.05},
                             "solver": {"t_final": 0.3}})
    rep = run_quasineutral_sweep(sc)
    s = rep["summary"]
    sups = s["sup_w1"]
    ok = not s["errors"] and s["trend_as_eps_decreases"] == "strictly decreasing"
    report(7, ok, "sup W1 " + ", ".join(f"eps={e}: {w:.4f}" for e, w in zip(s["eps"], sups)),
           time.perf_counter() - t0, 300)


def test_criterion_08_cold_limit_rate():
    t0 = time.perf_counter()
    sc = Scenario.from_dict({"name": "dirac", "eps": [0.4, 0.2, 0.1, 0.05],
                             "initial": {"family": "cosine", "amplitude": 0.05,
                                         "entropy_constant": 0.5}})
    rep = run_dirac_limit(sc)
    p = rep["summary"]["fitted_exponent"]
    h = [t["h0"] / t["eps"] for t in rep["summary"]["table"]]
    ok = p is not None and 0.35 <= p <= 0.65 and not rep["summary"]["errors"]
    report(8, ok, f"fitted exponent {p:.3f}; H(0)/eps in [{min(h):.3f}, {max(h):.3f}]",
           time.perf_counter() - t0, 300)


def test_criterion_09_penrose():
    t0 = time.perf_counter()
    maxw = diag.penrose_criterion(diag.maxwellian(1.0))
    stable_maxwellian = not maxw["applicable"] and not maxw["unstable"]

    def excess(a):
        rep = diag.penrose_criterion(diag.two_bump(a, 0.2))
        (m,) = rep["minima"]
        return m["integral"][0] - 1.0

    window = np.linspace(0.21, 0.38, 18)
    values = np.array([excess(a) for a in window])
    monotone = bool(np.all(np.diff(values) > 0))
    lo, hi = 0.25, 0.30
    sign_change = excess(lo) < 0 < excess(hi)
    root, res = optimize.brentq(excess, lo, hi, xtol=1e-4, full_output=True)
    # bracket of width <= 1e-3 around the crossing
    a1, a2 = root - 4e-4, root + 4e-4
    bracketed = excess(a1) < 0 < excess(a2)
    at_one = excess(1.0) > 0
    ok = stable_maxwellian and monotone and sign_change and bracketed and at_one
    report(9, ok, f"Maxwellian not applicable: {stable_maxwellian}; integral monotone on "
                  f"a in [0.21, 0.38]: {monotone}; crossing a* in [{a1:.4f}, {a2:.4f}]; "
                  f"unstable at a=1: {at_one}", time.perf_counter() - t0, 10)


def _two_stream(n, eps, amp=0.05, speed=1.5):
    x = grid_nodes(n)
    rho = 0.5 * (1 + amp * np.cos(2 * np.pi * x))
    return FluidState([rho, rho], [np.full(n, speed), np.full(n, -speed)], eps)


def test_criterion_10_fluid_consistency():
    t0 = time.perf_counter()
    T, dt, n = 0.5, 0.005, 32
    ref = integrate_fluid(_two_stream(n, 0.0), T, dt)
    gaps = []
    for eps in (0.5, 0.25, 0.125):
        run_ = integrate_fluid(_two_stream(n, eps), T, dt)
        assert not run_.aborted, run_.reason
        gaps.append(max(max(np.max(np.abs(a.rho - b.rho)), np.max(np.abs(a.v - b.v)))
                        for a, b in zip(run_.states, ref.states)))
    decreasing = bool(np.all(np.diff(gaps) < 0))
    # self-convergence at eps = 0.5 on a coarser grid, every dt within the cap
    s = _two_stream(16, 0.5)
    dts = [0.01, 0.005]
    assert dts[0] <= dt_cap(s)
    fine = integrate_fluid(s, T, dts[-1] / 8).final
    errs = [max(np.max(np.abs(integrate_fluid(s, T, h).final.rho - fine.rho)),
                np.max(np.abs(integrate_fluid(s, T, h).final.v - fine.v))) for h in dts]
    order = math.log2(errs[0] / errs[1])
    report(10, decreasing and order >= 3.8,
           "sup gap " + ", ".join(f"{g:.4f}" for g in gaps) + f" for eps 0.5, 0.25, 0.125; "
           f"RK4 order {order:.2f}", time.perf_counter() - t0, 120)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
