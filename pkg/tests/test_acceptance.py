"""Acceptance criteria A1-A9.

Each test prints one ``A<k> PASS|FAIL`` line (visible without ``-s``) and
then asserts. The shared closed-loop runs come from the session fixtures in
``conftest.py``; their build time counts toward the total runtime budget.
"""
import time

import numpy as np
import pytest

from backupcbf.controllers import kkt_check, oi_mu_star
from backupcbf.integrate import HorizonGrid
from backupcbf.sim import SAFE_CONTROLLERS, compute_metrics, max_state_deviation
from backupcbf.verify import (
    _random_aircraft_state,
    grid_oracle_mu,
    push_forward_agreement,
    random_feasible_coeffs,
    sample_backup_set_states,
    sensitivity_fd_error,
    turn_invariance,
)

from conftest import AC_GRID, DI_GRID, RUN_SECONDS

SECONDS = {}


@pytest.fixture(autouse=True)
def _timed(request):
    t0 = time.perf_counter()
    yield
    SECONDS[request.node.name] = time.perf_counter() - t0


@pytest.fixture
def report(capsys):
    def emit(tag, passed, detail):
        with capsys.disabled():
            print(f"\n{tag} {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return emit


def oi_logs(di_runs, aircraft_runs):
    return {"double_integrator": di_runs["oi"][1], "aircraft": aircraft_runs["oi"][1]}


def test_a1_closed_form_matches_grid_oracle(report, di_runs, aircraft_runs):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, misses, skipped = 0.0, 0, 0
    instances = [random_feasible_coeffs(rng, N=20) for _ in range(1000)]
    for name, log in oi_logs(di_runs, aircraft_runs).items():
        for k in rng.choice(len(log), 250, replace=False):
            if log.status[k] == "OutOfDomain":
                skipped += 1  # no mu in [0, 1] exists; covered by A9
                continue
            instances.append(log.coeffs[k])
    for c in instances:
        mu, _, _ = oi_mu_star(c)
        ref = grid_oracle_mu(c, step=1e-6)
        if ref is None:
            misses += 1
            continue
        worst = max(worst, abs(mu - ref))
    elapsed = time.perf_counter() - t0
    ok = worst <= 2e-6 and misses == 0 and elapsed < 10.0
    report("A1", ok, f"{len(instances)} instances ({skipped} out-of-domain states excluded), "
                     f"max |mu - oracle| = {worst:.2e}, oracle misses {misses}, {elapsed:.2f} s")
    assert ok


def test_a2_kkt_certifies_every_mu(report, di_runs, aircraft_runs):
    checked, bad = 0, 0
    for log in oi_logs(di_runs, aircraft_runs).values():
        for rep in log.kkt:
            if rep is None:
                continue  # out-of-domain steps carry no optimum to certify
            checked += 1
            bad += not rep.ok
    rng = np.random.default_rng(2025)
    for _ in range(1000):
        c = random_feasible_coeffs(rng)
        mu, j, _ = oi_mu_star(c)
        checked += 1
        bad += not kkt_check(c, mu, j).ok
    ok = bad == 0
    report("A2", ok, f"{checked} mu* certified (trajectories + 1000 random), {bad} violations")
    assert ok


def test_a3_push_forward_reduction(report, di, aircraft, di_runs, aircraft_runs):
    rng = np.random.default_rng(2026)
    di_states = rng.uniform([-3.0, -2.0], [1.0, 2.0], size=(100, 2))
    ac_states = [_random_aircraft_state(rng, aircraft.extras["params"]) for _ in range(100)]
    err_di = push_forward_agreement(di, di_states, DI_GRID)
    err_ac = push_forward_agreement(aircraft, ac_states, AC_GRID)
    counts = {
        "aircraft": (aircraft_runs["bcbf_qp"][1].ode_count, aircraft_runs["oi"][1].ode_count),
        "double_integrator": (di_runs["bcbf_qp"][1].ode_count, di_runs["oi"][1].ode_count),
    }
    ok = (err_di <= 1e-6 and err_ac <= 1e-6 and counts["aircraft"] == (72, 24)
          and counts["double_integrator"] == (6, 6))
    report("A3", ok, f"relative push-forward error DI {err_di:.1e}, aircraft {err_ac:.1e}; "
                     f"ODEs per step bCBF/OI aircraft {counts['aircraft']}, DI {counts['double_integrator']}")
    assert ok


def test_a4_sensitivity_matches_finite_differences(report, aircraft):
    rng = np.random.default_rng(2027)
    grid = HorizonGrid(5.0, 50, 0.05)
    states = [_random_aircraft_state(rng, aircraft.extras["params"]) for _ in range(5)]
    worst = max(sensitivity_fd_error(aircraft, x, grid, step=1e-5) for x in states)
    ok = worst <= 1e-4
    report("A4", ok, f"max relative column error {worst:.2e} over {len(states)} states, T = 5 s")
    assert ok


def test_a5_oi_equals_bcbf_qp_on_double_integrator(report, di_runs):
    dev = max_state_deviation(di_runs["oi"][1], di_runs["bcbf_qp"][1])
    ok = dev <= 1e-3
    report("A5", ok, f"max state deviation OI vs bCBF-QP over 10 s = {dev:.2e}")
    assert ok


def test_a6_oscillation_elimination(report, di, di_runs):
    bl = compute_metrics(di_runs["blended"][1], di.box, after_contact=True).u_sign_reversals[0]
    oi = compute_metrics(di_runs["oi"][1], di.box, after_contact=True).u_sign_reversals[0]
    ok = bl >= 5 and oi == 0
    report("A6", ok, f"sign reversals after first contact: blended {bl}, OI {oi}")
    assert ok


def test_a7_safety_under_input_bounds(report, di_runs, aircraft_runs):
    lines, ok = [], True
    for scen, runs in (("double_integrator", di_runs), ("aircraft", aircraft_runs)):
        for name in SAFE_CONTROLLERS:
            cfg, log = runs[name]
            m = compute_metrics(log, cfg.plant.box)
            ok &= m.min_h >= -1e-3 and m.input_violations == 0
            lines.append(f"{scen}/{name} min_h={m.min_h:+.3g} viol={m.input_violations}")
    cfg, log = aircraft_runs["nominal"]
    nominal = compute_metrics(log, cfg.plant.box).min_h
    ok &= nominal < 0
    lines.append(f"aircraft/nominal min_h={nominal:+.3g}")
    report("A7", ok, "; ".join(lines))
    assert ok


def test_a8_backup_set_invariance(report, aircraft):
    prm = aircraft.extras["params"]
    states = sample_backup_set_states(np.random.default_rng(2028), prm, 50)
    res = turn_invariance(prm, states)
    ok = res["h6_drift"] <= 1e-6 and res["min_band"] >= 0.0 and res["position_error"] <= 1e-6
    report("A8", ok, f"50 states, one period: h6 drift {res['h6_drift']:.1e}, "
                     f"min h1..h5 {res['min_band']:.2e}, closed-form position error {res['position_error']:.1e} m")
    assert ok


def test_a9_feasible_on_implicit_invariant_set(report, di_runs, aircraft_runs):
    lines, ok = [], True
    for name, log in oi_logs(di_runs, aircraft_runs).items():
        if not log.h_I[0] >= 0:
            lines.append(f"{name}: x0 not in C_BI, skipped")
            continue
        flags = sum(1 for s in log.status if s == "OutOfDomain")
        worst = float(np.nanmax(np.asarray(log.mu_unclamped, dtype=float)))
        ok &= flags == 0 and worst <= 1 + 1e-9
        lines.append(f"{name}: OutOfDomain {flags}/{len(log)}, max unclamped mu* {worst:.6g}")
    report("A9", ok, "; ".join(lines))
    assert ok


def test_total_runtime(report):
    total = sum(RUN_SECONDS.values()) + sum(SECONDS.values())
    ok = total < 120.0
    report("A*", ok, f"simulations {sum(RUN_SECONDS.values()):.1f} s + checks {sum(SECONDS.values()):.1f} s "
                     f"= {total:.1f} s (budget 120 s)")
    assert ok
