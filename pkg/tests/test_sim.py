import numpy as np
import pytest

from backupcbf.controllers import ControllerOutput
from backupcbf.core import InputBox
from backupcbf.sim import (
    SAFE_CONTROLLERS,
    SimConfig,
    TrajectoryLog,
    compare_controllers,
    compute_metrics,
    count_mu_switches,
    count_sign_reversals,
    max_state_deviation,
    simulate,
)

from conftest import DI_GRID, DI_X0


def test_zero_duration_run_has_initial_row(di):
    log = simulate(SimConfig(di, "oi", DI_X0, 0.0, 0.005, 0.005, grid=DI_GRID))
    assert len(log) == 1 and log.t == [0.0]
    assert np.array_equal(log.x[0], DI_X0)


def test_backup_run_matches_analytic(di):
    log = simulate(SimConfig(di, "backup", DI_X0, 1.0, 0.01, 0.005))
    t = np.asarray(log.t)
    exact = np.stack([-1 - t**2 / 2, -t], axis=1)
    assert np.max(np.abs(np.asarray(log.x) - exact)) <= 1e-6
    assert len(log) == 101


def test_config_validation(di):
    with pytest.raises(ValueError):
        SimConfig(di, "oi", DI_X0, 1.0, 0.01, 0.003, grid=DI_GRID)
    with pytest.raises(ValueError):
        SimConfig(di, "oi", DI_X0, 1.0, 0.01, 0.005)  # no grid
    with pytest.raises(ValueError):
        SimConfig(di, "magic", DI_X0, 1.0, 0.01, 0.005)
    with pytest.raises(ValueError):
        SimConfig(di, "nominal", [0.0, np.nan], 1.0, 0.01, 0.005)
    with pytest.raises(ValueError):
        SimConfig(di, "nominal", DI_X0, -1.0, 0.01, 0.005)


def test_reversal_counting():
    assert count_sign_reversals(np.full(20, 0.7)) == 0
    assert count_sign_reversals([(-1.0) ** k for k in range(11)]) == 10
    # a slow pass through zero counts once
    assert count_sign_reversals([1.0, 1e-4, 0.0, -1e-4, -1.0]) == 1
    assert count_sign_reversals([1e-4, -1e-4, 1e-4]) == 0


def test_mu_switch_counting():
    assert count_mu_switches([0.0, 1.0, 1.0, 0.2, 0.6]) == 3
    assert count_mu_switches([np.nan, 0.0]) == 0


def test_metrics_on_synthetic_log():
    log = TrajectoryLog(n=1, m=1, controller="x")
    for k in range(11):
        out = ControllerOutput(u=np.array([(-1.0) ** k]), mu=1.0 if k >= 3 else 0.0)
        log.append(0.1 * k, np.array([0.0]), out, 1.0 - k, 0.0, 5.0)
    box = InputBox([-1.0], [1.0])
    m = compute_metrics(log, box)
    assert m.u_sign_reversals == (10,)
    assert m.input_violations == 0
    assert m.min_h == -9.0
    assert m.mu_switch_count == 1
    assert compute_metrics(log, box, after_contact=True).u_sign_reversals == (7,)
    assert compute_metrics(log, InputBox([-0.5], [1.0])).input_violations == 5


def test_empty_log_rejected():
    with pytest.raises(ValueError):
        compute_metrics(TrajectoryLog(n=1, m=1, controller="x"), InputBox([-1.0], [1.0]))


def test_rows_and_monotone_time(di_runs):
    for cfg, log in di_runs.values():
        assert len(log) == cfg.steps + 1 == 2001
        assert np.all(np.diff(log.t) > 0)


def test_oi_matches_bcbf_qp(di_runs):
    dev = max_state_deviation(di_runs["oi"][1], di_runs["bcbf_qp"][1])
    assert dev <= 1e-3


def test_blended_oscillates_oi_does_not(di_runs):
    box = di_runs["oi"][0].plant.box
    oi = compute_metrics(di_runs["oi"][1], box, after_contact=True)
    bl = compute_metrics(di_runs["blended"][1], box, after_contact=True)
    assert bl.u_sign_reversals[0] > oi.u_sign_reversals[0] == 0


def test_safe_controllers_keep_double_integrator_safe(di_runs):
    for name in SAFE_CONTROLLERS:
        cfg, log = di_runs[name]
        m = compute_metrics(log, cfg.plant.box)
        assert m.min_h >= -1e-3 and m.input_violations == 0, name
    # primary alone drives straight through the boundary
    assert compute_metrics(di_runs["nominal"][1], di_runs["nominal"][0].plant.box).min_h < -1


def test_aircraft_oi_heading_at_fence_is_safe(aircraft_runs):
    cfg, log = aircraft_runs["oi"]
    assert compute_metrics(log, cfg.plant.box).min_h >= -1e-3


def test_compare_controllers(di):
    cfg = SimConfig(di, "oi", DI_X0, 2.0, 0.005, 0.005, grid=DI_GRID)
    report = compare_controllers({"a": cfg, "b": cfg})
    assert report["max_state_deviation"] == {"a|b": 0.0}
    assert set(report["metrics"]) == {"a", "b"}
    other = SimConfig(di, "oi", [-2.0, 0.0], 2.0, 0.005, 0.005, grid=DI_GRID)
    with pytest.raises(ValueError):
        compare_controllers({"a": cfg, "b": other})


def test_simulation_is_deterministic(di):
    cfg = SimConfig(di, "blended", DI_X0, 3.0, 0.005, 0.005, grid=DI_GRID)
    a, b = simulate(cfg), simulate(cfg)
    assert np.array_equal(a.arrays()["x"], b.arrays()["x"])
    assert np.array_equal(a.arrays()["u"], b.arrays()["u"])
    assert a.status == b.status


def test_halving_hold_period_does_not_worsen_safety(di, di_runs):
    coarse = compute_metrics(di_runs["oi"][1], di.box).min_h
    fine_cfg = SimConfig(di, "oi", DI_X0, 10.0, 0.0025, 0.0025, grid=DI_GRID)
    fine = compute_metrics(simulate(fine_cfg), di.box).min_h
    assert min(fine, 0.0) >= min(coarse, 0.0)
