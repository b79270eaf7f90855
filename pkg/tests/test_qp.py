import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from backupcbf.core import InputBox
from backupcbf.qp import INFEASIBLE, OPTIMAL, LinearConstraintSet, certificate_margin, lambda_relu, solve_box_qp
from backupcbf.verify import grid_oracle_qp2, random_qp_instance, suite_oracle

coef = st.floats(-5, 5, allow_nan=False)


@pytest.mark.parametrize("a,b,expected", [(-1, 2, 0.5), (3, 2, 0.0), (-1, -2, 0.0), (-1, 0, 0.0)])
def test_lambda_relu(a, b, expected):
    assert lambda_relu(a, b) == expected


def test_interior_target_is_returned():
    box = InputBox([-1.0, -1.0], [1.0, 1.0])
    sol = solve_box_qp([0.2, -0.3], LinearConstraintSet([[1.0, 0.0]], [1.0], box))
    assert sol.status == OPTIMAL
    assert np.array_equal(sol.u_star, [0.2, -0.3])
    assert sol.active_set == []


def test_single_row_projection():
    box = InputBox([-1.0], [1.0])
    sol = solve_box_qp([-0.5], LinearConstraintSet([[1.0]], [-0.3], box))
    assert sol.status == OPTIMAL
    assert sol.u_star == pytest.approx([0.3], abs=1e-15)
    assert sol.active_set == [0]
    assert sol.multipliers[0] == pytest.approx(0.8)


def test_box_rows_indexing():
    box = InputBox([-1.0, 0.0], [1.0, 2.0])
    sol = solve_box_qp([3.0, -1.0], LinearConstraintSet(np.zeros((0, 2)), [], box))
    # lower of input j at k+2j, upper at k+2j+1 with k=0 user rows
    assert sol.active_set == [1, 2]
    assert np.allclose(sol.u_star, [1.0, 0.0])


def test_infeasible_returns_certificate():
    box = InputBox([-1.0], [1.0])
    cons = LinearConstraintSet([[1.0], [-1.0]], [-0.6, -0.6], box)  # u >= 0.6 and u <= -0.6
    sol = solve_box_qp([0.0], cons)
    assert sol.status == INFEASIBLE
    C, d = cons.all_rows()
    y = sol.certificate
    assert np.all(y >= 0)
    assert np.allclose(y @ C, 0.0, atol=1e-12)
    assert y @ d < 0
    assert certificate_margin(y, cons) < 0


def test_validation():
    box = InputBox([-1.0], [1.0])
    with pytest.raises(ValueError):
        LinearConstraintSet([[1.0, 2.0]], [0.0], box)
    with pytest.raises(ValueError):
        solve_box_qp([np.nan], LinearConstraintSet([[1.0]], [0.0], box))


@given(st.lists(st.tuples(coef, coef, coef), min_size=0, max_size=6), coef, coef)
def test_solution_contract(rows, t0, t1):
    box = InputBox([-1.0, -1.0], [1.0, 1.0])
    cons = LinearConstraintSet.from_rows([((c0, c1), d) for c0, c1, d in rows], box)
    sol = solve_box_qp([t0, t1], cons)
    C, d = cons.all_rows()
    if sol.status == OPTIMAL:
        assert box.contains(sol.u_star)
        res = C @ sol.u_star + d
        assert np.all(res >= -1e-9)
        for j, lam in sol.multipliers.items():
            assert lam >= -1e-10
            # relative to the multiplier: nearly parallel rows have multipliers ~ 1/angle
            assert abs(lam * res[j]) <= 1e-8 * (1 + abs(lam))
        # stationarity: u - t = sum lam_j c_j
        grad = sum((lam * C[j] for j, lam in sol.multipliers.items()), np.zeros(2))
        lam_max = max(sol.multipliers.values(), default=0.0)
        assert np.allclose(sol.u_star - np.array([t0, t1]), grad, atol=1e-8 * (1 + lam_max))
    else:
        assert sol.status == INFEASIBLE
        y = sol.certificate
        assert np.all(y >= 0)
        assert certificate_margin(y, cons) < 0


def test_one_input_matches_interval_and_two_input_matches_oracle():
    res = suite_oracle(np.random.default_rng(5), n_mu=0, n_qp1=10_000, n_qp2=1000)
    by_name = {r.name: r for r in res}
    assert by_name["1-input QP vs interval solution"].passed, by_name["1-input QP vs interval solution"].detail
    assert by_name["2-input QP vs grid oracle"].passed, by_name["2-input QP vs grid oracle"].detail


def test_grid_oracle_agrees_with_brute_force_grid():
    # the column scan must find the same best grid point as a dense scan
    rng = np.random.default_rng(6)
    for _ in range(10):
        t, cons = random_qp_instance(rng, 2, 3)
        _, gval = grid_oracle_qp2(t, cons, step=1e-2)
        xs = np.linspace(-1, 1, 201)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        P = np.stack([X.ravel(), Y.ravel()], axis=1)
        P = P[np.all(P @ cons.C.T + cons.d >= 0, axis=1)]
        assert gval == pytest.approx(np.min(np.sum((P - t) ** 2, axis=1)), abs=1e-12)
