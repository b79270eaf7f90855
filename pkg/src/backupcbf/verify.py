"""Randomized verification suites shared by the CLI and the test-suite.

Each suite returns a list of :class:`CheckResult`. The oracles here are
deliberately independent of the code they check: grid searches for the
scalar and two-input QPs, finite differences for sensitivities, the
closed-form coordinated turn for the aircraft flow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controllers import ConstraintCoeffs, kkt_check, oi_mu_star
from .core import InputBox, eval_closed_loop, finite_difference_jacobian
from .integrate import (
    PUSH_FORWARD,
    SENSITIVITY,
    HorizonGrid,
    integrate_flow,
    integrate_push_forward,
    integrate_sensitivity,
    ode_count,
)
from .models import aircraft_scenario, double_integrator_scenario
from .models.aircraft import AircraftParams, backup_flow_position_closed_form, in_backup_set_state
from .qp import OPTIMAL, LinearConstraintSet, solve_box_qp

SUITES = ("kkt", "oracle", "sensitivity", "invariance")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------- random instances


def random_feasible_coeffs(rng: np.random.Generator, N: int = 20) -> ConstraintCoeffs:
    """Rows ``0..N+1`` that share a feasible point ``mu0`` in ``[0, 1]``."""
    mu0 = rng.uniform(0.0, 1.0)
    b = rng.normal(size=N + 2)
    b[rng.uniform(size=N + 2) < 0.1] = 0.0  # some input-independent rows
    slack = rng.exponential(0.5, size=N + 2)
    slack[rng.uniform(size=N + 2) < 0.2] = 0.0  # rows tight at mu0
    a = -b * mu0 + slack
    return ConstraintCoeffs.from_rows(a, b)


def _min_feasible(a, b, grid, tol):
    slack = a[None, :] + grid[:, None] * b[None, :]
    ok = np.all(slack >= -tol, axis=1)
    hits = np.flatnonzero(ok)
    return None if hits.size == 0 else float(grid[hits[0]])


def grid_oracle_mu(coeffs: ConstraintCoeffs, step: float = 1e-6):
    """Smallest grid point of ``[0, 1]`` within one step of every row with nonzero slope.

    A row counts as satisfied at a grid point when its violation is at most
    ``step * |b|``, so the oracle cannot miss a feasible set that is a single
    point. A coarse pass with step ``1e-3`` locates the first feasible cell,
    which is then rescanned at ``step``. Returns ``None`` when nothing is
    feasible.
    """
    live = np.abs(coeffs.b) > 1e-12 * (1.0 + np.abs(coeffs.a))
    a, b = coeffs.a[live], coeffs.b[live]
    coarse_step = 1e-3
    coarse = np.linspace(0.0, 1.0, int(round(1.0 / coarse_step)) + 1)
    c = _min_feasible(a, b, coarse, coarse_step * np.abs(b))
    if c is None:
        return None
    lo = max(0.0, c - coarse_step)
    fine = lo + step * np.arange(int(round((min(1.0, c + coarse_step) - lo) / step)) + 1)
    return _min_feasible(a, b, fine, step * np.abs(b))


def random_qp_instance(rng: np.random.Generator, m: int, rows: int):
    """Box ``[-1, 1]^m`` and rows that share a strictly feasible point."""
    box = InputBox(-np.ones(m), np.ones(m))
    u0 = rng.uniform(-0.8, 0.8, size=m)
    C = rng.normal(size=(rows, m))
    d = -C @ u0 + rng.exponential(0.3, size=rows)
    target = rng.uniform(-2.0, 2.0, size=m)
    return target, LinearConstraintSet(C, d, box)


def grid_oracle_qp2(target, cons: LinearConstraintSet, step: float = 1e-3):
    """Two-input QP by grid search followed by local refinement.

    The grid (step ``step`` over the box) gives an incumbent. Because the
    objective is flat to first order along an active edge, a grid alone is
    only accurate to about ``sqrt(step)`` there, so the incumbent is refined
    by the exact candidates of a 2-D problem: the target itself, its
    projection onto each row's line and the intersection of each pair of
    rows. Returns ``(u, grid_value)``, where ``grid_value`` is the best
    objective over feasible grid points, or ``(None, inf)`` if nothing is
    feasible.
    """
    t = np.asarray(target, dtype=float)
    lo, hi = cons.box.lower, cons.box.upper
    C, d = cons.all_rows()
    # scan column by column: the feasible grid points of a column form a
    # contiguous run of y values, so the best one is found without enumerating
    xs = np.linspace(lo[0], hi[0], int(round((hi[0] - lo[0]) / step)) + 1)
    ny = int(round((hi[1] - lo[1]) / step))
    ylo = np.full(xs.shape, lo[1])
    yhi = np.full(xs.shape, hi[1])
    ok = np.ones(xs.shape, dtype=bool)
    for (c0, c1), di in zip(C, d):
        r = c0 * xs + di
        if c1 > 0:
            ylo = np.maximum(ylo, -r / c1)
        elif c1 < 0:
            yhi = np.minimum(yhi, -r / c1)
        else:
            ok &= r >= 0
    k_lo = np.ceil((ylo - lo[1]) / step - 1e-9)
    k_hi = np.floor((yhi - lo[1]) / step + 1e-9)
    k = np.clip(np.round((t[1] - lo[1]) / step), k_lo, k_hi)
    ok &= (k_lo <= k_hi) & (k_lo <= ny) & (k_hi >= 0)
    P = np.stack([xs, lo[1] + k * step], axis=1)[ok]
    # the 1e-9 slack above may admit points a hair outside a row; keep exact ones only
    P = P[np.all(P @ C.T + d >= 0.0, axis=1)] if P.size else P
    best, best_val = None, np.inf
    if P.shape[0]:
        vals = np.sum((P - t) ** 2, axis=1)
        j = int(np.argmin(vals))
        best, best_val = P[j], float(vals[j])
    grid_val = best_val
    cands = [t]
    for i in range(C.shape[0]):
        nn = C[i] @ C[i]
        if nn > 0.0:
            cands.append(t - (C[i] @ t + d[i]) / nn * C[i])
        for j in range(i + 1, C.shape[0]):
            M = C[[i, j]]
            if abs(np.linalg.det(M)) > 1e-12:
                cands.append(np.linalg.solve(M, -d[[i, j]]))
    for u in cands:
        if np.all(C @ u + d >= -1e-9):
            v = float(np.sum((u - t) ** 2))
            if v < best_val:
                best, best_val = u, v
    return best, grid_val


# ---------------------------------------------------------------- suites


def suite_kkt(rng: np.random.Generator, n: int = 1000) -> list[CheckResult]:
    bad = 0
    worst = 0.0
    for _ in range(n):
        c = random_feasible_coeffs(rng)
        mu, j, out = oi_mu_star(c)
        rep = kkt_check(c, mu, j)
        if out or not rep.ok:
            bad += 1
        worst = max(worst, rep.complementary, rep.stationarity, max(0.0, -rep.primal))
    res = [CheckResult("kkt random feasible instances", bad == 0,
                       f"{n} instances, {bad} violations, worst residual {worst:.2e}")]
    # a corrupted mu* must be caught
    c = random_feasible_coeffs(rng)
    mu, j, _ = oi_mu_star(c)
    caught = not kkt_check(c, mu + 0.1, j).ok
    res.append(CheckResult("kkt detects corrupted mu*", caught, f"mu*+0.1 flagged={caught}"))
    return res


def suite_oracle(rng: np.random.Generator, n_mu: int = 1000, n_qp1: int = 10_000,
                 n_qp2: int = 1000) -> list[CheckResult]:
    worst = 0.0
    missing = 0
    for _ in range(n_mu):
        c = random_feasible_coeffs(rng)
        mu, _, _ = oi_mu_star(c)
        ref = grid_oracle_mu(c)
        if ref is None:
            missing += 1
            continue
        worst = max(worst, abs(mu - ref))
    res = [CheckResult("closed-form mu* vs grid oracle", worst <= 2e-6 and missing == 0,
                       f"{n_mu} instances, max |diff| {worst:.2e}, oracle misses {missing}")]

    # one input: the feasible set is an interval
    box = InputBox([-1.0], [1.0])
    bad1 = 0
    for _ in range(n_qp1):
        k = rng.integers(1, 5)
        C = rng.normal(size=(k, 1))
        d = rng.normal(size=k)
        t = rng.uniform(-2, 2, size=1)
        lo, hi = -1.0, 1.0
        for ci, di in zip(C[:, 0], d):
            if ci > 0:
                lo = max(lo, -di / ci)
            elif ci < 0:
                hi = min(hi, -di / ci)
            elif di < 0:
                lo, hi = 1.0, -1.0
        sol = solve_box_qp(t, LinearConstraintSet(C, d, box))
        if lo <= hi:
            ok = sol.status == OPTIMAL and abs(sol.u_star[0] - min(max(t[0], lo), hi)) <= 1e-9
        else:
            ok = sol.status != OPTIMAL
        bad1 += not ok
    res.append(CheckResult("1-input QP vs interval solution", bad1 == 0, f"{n_qp1} instances, {bad1} mismatches"))

    worst2 = 0.0
    skipped = 0
    grid_beats = 0
    for _ in range(n_qp2):
        t, cons = random_qp_instance(rng, 2, int(rng.integers(1, 6)))
        sol = solve_box_qp(t, cons)
        ref, grid_val = grid_oracle_qp2(t, cons)
        if ref is None:
            skipped += 1
            continue
        worst2 = max(worst2, float(np.max(np.abs(sol.u_star - ref))))
        grid_beats += grid_val < float(np.sum((sol.u_star - t) ** 2)) - 1e-12
    res.append(CheckResult("2-input QP vs grid oracle", worst2 <= 2e-3 and grid_beats == 0 and skipped == 0,
                           f"{n_qp2} instances, max |du| {worst2:.2e}, grid point better than solver {grid_beats}, "
                           f"oracle found nothing {skipped}"))
    return res


def _random_aircraft_state(rng, prm: AircraftParams) -> np.ndarray:
    return np.array([
        rng.uniform(-1.0, 1.0), rng.uniform(-0.3, 0.3), rng.uniform(-math.pi, math.pi),
        rng.uniform(-5e3, 5e3), rng.uniform(-5e3, 5e3), prm.H_star + rng.uniform(-300, 300),
        rng.uniform(-1.0, 1.0), rng.uniform(0.0, 3.0),
    ])


def push_forward_agreement(plant, states, grid: HorizonGrid) -> float:
    """Worst ``||q - Phi f|| / (1 + ||q||)`` over states and samples, both vectors."""
    worst = 0.0
    model = plant.model
    for x in states:
        s = integrate_sensitivity(model, plant.backup, x, grid)
        q = integrate_push_forward(model, plant.primary, plant.backup, x, grid)
        fx, gx = model.f(x), model.g(x)
        f_p = fx + gx @ plant.primary(x)
        f_cl = fx + gx @ plant.backup(x)
        for qv, fv in ((q.q_p, f_p), (q.q_b, f_cl)):
            err = np.linalg.norm(qv - s.Phi @ fv, axis=1) / (1.0 + np.linalg.norm(qv, axis=1))
            worst = max(worst, float(np.max(err)))
    return worst


def sensitivity_fd_error(plant, x, grid: HorizonGrid, step: float = 1e-5) -> float:
    """Max relative error between ``Phi`` columns and central differences of the flow."""
    s = integrate_sensitivity(plant.model, plant.backup, x, grid)
    worst = 0.0
    for j in range(plant.n):
        e = np.zeros(plant.n)
        e[j] = step
        fp = integrate_flow(plant.model, plant.backup, x + e, grid).phi
        fm = integrate_flow(plant.model, plant.backup, x - e, grid).phi
        fd = (fp - fm) / (2 * step)
        col = s.Phi[:, :, j]
        err = np.linalg.norm(fd - col, axis=1) / np.maximum(1.0, np.linalg.norm(col, axis=1))
        worst = max(worst, float(np.max(err)))
    return worst


def suite_sensitivity(rng: np.random.Generator, n_states: int = 100, n_fd: int = 5) -> list[CheckResult]:
    res = []
    di = double_integrator_scenario()
    di_states = rng.uniform(-2, 2, size=(n_states, 2))
    e = push_forward_agreement(di, di_states, HorizonGrid(2.0, 20, 0.02))
    res.append(CheckResult("double integrator push-forward vs sensitivity", e <= 1e-6, f"max rel err {e:.2e}"))
    ac = aircraft_scenario()
    prm = ac.extras["params"]
    ac_states = [_random_aircraft_state(rng, prm) for _ in range(n_states)]
    grid = HorizonGrid(20.0, 40, 0.05)
    e = push_forward_agreement(ac, ac_states, grid)
    res.append(CheckResult("aircraft push-forward vs sensitivity", e <= 1e-6, f"max rel err {e:.2e}"))
    counts = (ode_count(8, SENSITIVITY), ode_count(8, PUSH_FORWARD))
    res.append(CheckResult("aircraft ODE counts", counts == (72, 24), f"sensitivity {counts[0]}, push-forward {counts[1]}"))
    grid5 = HorizonGrid(5.0, 10, 0.05)
    fd = max(sensitivity_fd_error(ac, _random_aircraft_state(rng, prm), grid5) for _ in range(n_fd))
    res.append(CheckResult("aircraft sensitivity vs finite differences", fd <= 1e-4, f"max rel err {fd:.2e}"))
    jac = 0.0
    for _ in range(n_fd * 4):
        x = _random_aircraft_state(rng, prm)
        J = ac.model.jac_f_cl(x)
        Jfd = finite_difference_jacobian(lambda z: eval_closed_loop(ac.model, ac.backup, z), x, 1e-6)
        jac = max(jac, float(np.max(np.abs(J - Jfd)) / (1.0 + np.max(np.abs(J)))))
    res.append(CheckResult("aircraft closed-loop Jacobian vs finite differences", jac <= 1e-4, f"max rel err {jac:.2e}"))
    return res


def sample_backup_set_states(rng: np.random.Generator, prm: AircraftParams, n: int) -> np.ndarray:
    """States on the coordinated turn whose turn circle clears the geofence."""
    from .models.aircraft import AircraftSets

    sets = AircraftSets(prm)
    out = []
    while len(out) < n:
        psi = rng.uniform(-math.pi, math.pi)
        x = in_backup_set_state(psi, 0.0, rng.uniform(-5e3, 5e3), prm)
        # choose p_N so that h_6 is a random positive margin
        x[3] = 0.0
        x[3] += (sets.h6(x) - rng.uniform(0.0, 3e3)) / -sets.n_g[0] if sets.n_g[0] != 0 else 0.0
        if sets.h6(x) >= 0.0:
            out.append(x)
    return np.array(out)


def turn_invariance(prm: AircraftParams, states) -> dict:
    """Integrate one full turn from each state; report the worst deviations."""
    from .models.aircraft import AircraftSets

    plant = aircraft_scenario(prm)
    sets = AircraftSets(prm)
    period = prm.turn_period
    N = 256
    grid = HorizonGrid(period, N, period / (N * 10))
    h6_drift = 0.0
    min_band = np.inf
    pos_err = 0.0
    for x in states:
        phi = integrate_flow(plant.model, plant.backup, x, grid).phi
        h6 = sets.h6(phi)
        h6_drift = max(h6_drift, float(np.max(np.abs(h6 - h6[0]))))
        min_band = min(min_band, float(np.min(sets.bands(phi)[:, :5])))
        closed = backup_flow_position_closed_form(x, grid.taus, prm)
        pos_err = max(pos_err, float(np.max(np.abs(phi[:, 3:5] - closed))))
    return {"h6_drift": h6_drift, "min_band": min_band, "position_error": pos_err}


def suite_invariance(rng: np.random.Generator, n_states: int = 50) -> list[CheckResult]:
    prm = AircraftParams()
    states = sample_backup_set_states(rng, prm, n_states)
    r = turn_invariance(prm, states)
    res = [
        CheckResult("h_6 constant over one turn", r["h6_drift"] <= 1e-6, f"max drift {r['h6_drift']:.2e} m"),
        CheckResult("h_1..h_5 stay nonnegative", r["min_band"] >= 0.0, f"min band {r['min_band']:.3e}"),
        CheckResult("closed-form turn position", r["position_error"] <= 1e-6, f"max error {r['position_error']:.2e} m"),
    ]
    di = double_integrator_scenario()
    grid = HorizonGrid(5.0, 50, 0.01)
    worst = np.inf
    for _ in range(n_states):
        x = -rng.exponential(1.0, size=2)
        phi = integrate_flow(di.model, di.backup, x, grid).phi
        worst = min(worst, float(np.min(-phi)))
    res.append(CheckResult("double integrator backup set invariance", worst >= 0.0, f"min(-x) {worst:.3e}"))
    return res


def run_suite(name: str, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    if name == "all":
        return [r for s in SUITES for r in run_suite(s, seed)]
    if name == "kkt":
        return suite_kkt(rng)
    if name == "oracle":
        return suite_oracle(rng)
    if name == "sensitivity":
        return suite_sensitivity(rng)
    if name == "invariance":
        return suite_invariance(rng)
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
