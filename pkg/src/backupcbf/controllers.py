"""Safety controllers built on a backup policy.

* ``cbf_filter_closed_form``: single-constraint CBF filter with unbounded input.
* ``bcbf_qp_controller``: minimal deviation from the primary input subject to
  the sampled backup-flow constraints (full sensitivity matrix).
* ``blended_controller``: exponential blending driven by the worst flow margin.
* ``oi_controller``: the optimally interpolated input ``k_p + mu*(k_b - k_p)``
  with ``mu*`` in closed form from push-forward vectors.

Rows whose coefficient on the input is numerically zero cannot be changed by
any input. They are kept in the coefficient arrays but excluded from the
optimization; their deficit ``min(0, a_i)`` is reported separately as
``uncontrollable_deficit``. For relative-degree-two barriers the ``tau = 0``
row is always of this kind.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ControlAffineModel, ControllerFn, SafetySpec
from .integrate import (
    FlowBundle,
    HorizonGrid,
    integrate_flow,
    integrate_push_forward,
    integrate_sensitivity,
)
from .qp import INFEASIBLE, OPTIMAL, LinearConstraintSet, lambda_relu, solve_box_qp

B_TOL = 1e-12
OUT_OF_DOMAIN_TOL = 1e-9


@dataclass(frozen=True)
class ConstraintCoeffs:
    """``a_i + b_i mu >= 0`` for ``i = 0..N+3``.

    ``0..N`` flow samples, ``N+1`` backup set at the horizon end,
    ``N+2`` is ``mu >= 0`` and ``N+3`` is ``mu <= 1``.
    """

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float, copy=True)
        b = np.array(self.b, dtype=float, copy=True)
        if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 4:
            raise ValueError("a and b must be 1-D arrays of equal length >= 4")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("coefficients must be finite")
        if not (a[-2] == 0.0 and b[-2] == 1.0 and a[-1] == 1.0 and b[-1] == -1.0):
            raise ValueError("last two rows must encode 0 <= mu <= 1")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_rows(cls, a_rows, b_rows) -> "ConstraintCoeffs":
        """Append the two domain rows to flow/backup-set rows ``0..N+1``."""
        return cls(np.concatenate([a_rows, [0.0, 1.0]]), np.concatenate([b_rows, [1.0, -1.0]]))

    @property
    def N(self) -> int:
        return self.a.shape[0] - 4

    def positive_set(self) -> np.ndarray:
        return np.flatnonzero(self.b > B_TOL * (1.0 + np.abs(self.a)))

    def input_independent(self) -> np.ndarray:
        return np.flatnonzero(np.abs(self.b) <= B_TOL * (1.0 + np.abs(self.a)))

    def uncontrollable_deficit(self) -> float:
        idx = self.input_independent()
        return float(min(0.0, np.min(self.a[idx]))) if idx.size else 0.0


@dataclass
class ControllerOutput:
    u: np.ndarray
    mu: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------- plain CBF


def cbf_filter_closed_form(spec: SafetySpec, model: ControlAffineModel, k_p: ControllerFn, x) -> ControllerOutput:
    """Closed-form CBF filter for unbounded input, then clamped into the box."""
    x = np.asarray(x, dtype=float)
    up = k_p(x)
    grad = spec.grad_h(x)
    Lg = grad @ model.g(x)
    a_hat = float(grad @ (model.f(x) + model.g(x) @ up) + spec.alpha(spec.h(x)))
    b_hat = float(Lg @ Lg)
    mu_hat = lambda_relu(a_hat, b_hat)
    u_raw = up + mu_hat * Lg
    u = np.minimum(np.maximum(u_raw, model.input_box.lower), model.input_box.upper)
    return ControllerOutput(
        u=u,
        mu=None,
        diagnostics={
            "u_raw": u_raw,
            "projected": bool(np.any(u != u_raw)),
            "mu_hat": mu_hat,
            "a_hat": a_hat,
            "b_hat": b_hat,
            "solver_status": OPTIMAL,
            "binding_index": 0 if mu_hat > 0 else None,
            "h_I": None,
        },
    )


# ---------------------------------------------------------------- backup CBF QP


def bcbf_constraint_rows(spec: SafetySpec, model: ControlAffineModel, k_p: ControllerFn,
                         k_b: ControllerFn, bundle: FlowBundle, x=None) -> LinearConstraintSet:
    """``N+2`` rows ``c.u + d >= 0`` from the sampled flow and sensitivity."""
    if bundle.Phi is None:
        raise ValueError("bundle has no sensitivity matrices")
    x = bundle.phi[0] if x is None else np.asarray(x, dtype=float)
    fx, gx = model.f(x), model.g(x)
    phi, Phi = bundle.phi, bundle.Phi
    w = np.einsum("ij,ijk->ik", spec.grad_h(phi), Phi)  # grad h(phi_i) Phi_i
    C = w @ gx
    d = w @ fx + spec.alpha(spec.h(phi))
    wb = spec.grad_h_b(phi[-1]) @ Phi[-1]
    C = np.vstack([C, wb @ gx])
    d = np.append(d, wb @ fx + spec.alpha_b(spec.h_b(phi[-1])))
    return LinearConstraintSet(C, d, model.input_box)


def bcbf_qp_controller(spec: SafetySpec, model: ControlAffineModel, k_p: ControllerFn,
                       k_b: ControllerFn, grid: HorizonGrid, x) -> ControllerOutput:
    """Backup-CBF QP; falls back to ``k_b(x)`` when the QP is infeasible."""
    x = np.asarray(x, dtype=float)
    bundle = integrate_sensitivity(model, k_b, x, grid)
    rows = bcbf_constraint_rows(spec, model, k_p, k_b, bundle, x)
    norms = np.linalg.norm(rows.C, axis=1)
    live = norms > B_TOL * (1.0 + np.abs(rows.d))
    deficit = float(min(0.0, np.min(rows.d[~live]))) if np.any(~live) else 0.0
    sol = solve_box_qp(k_p(x), LinearConstraintSet(rows.C[live], rows.d[live], model.input_box))
    live_idx = np.flatnonzero(live)
    binding = [int(live_idx[j]) for j in sol.active_set if j < live_idx.size]
    if sol.status == INFEASIBLE:
        u = k_b(x)
    else:
        u = sol.u_star
    return ControllerOutput(
        u=u,
        mu=None,
        diagnostics={
            "solver_status": sol.status,
            "binding_index": min(binding) if binding else None,
            "h_I": h_I_eval(spec, bundle),
            "h_b_terminal": float(spec.h_b(bundle.phi[-1])),
            "uncontrollable_deficit": deficit,
            "ode_count": bundle.ode_count,
        },
    )


# ---------------------------------------------------------------- blending


def h_I_eval(spec: SafetySpec, bundle: FlowBundle) -> float:
    """Worst margin of the sampled flow: ``min(min_i h(phi_i), h_b(phi_N))``."""
    return float(min(np.min(spec.h(bundle.phi)), spec.h_b(bundle.phi[-1])))


def blended_controller(spec: SafetySpec, model: ControlAffineModel, k_p: ControllerFn,
                       k_b: ControllerFn, grid: HorizonGrid, eta: float, x) -> ControllerOutput:
    """``(1 - mu) k_p + mu k_b`` with ``mu = exp(-eta max(h_I, 0))``."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    x = np.asarray(x, dtype=float)
    bundle = integrate_flow(model, k_b, x, grid)
    hI = h_I_eval(spec, bundle)
    mu = float(np.exp(-eta * max(hI, 0.0)))
    u = (1.0 - mu) * k_p(x) + mu * k_b(x)
    return ControllerOutput(
        u=u,
        mu=mu,
        diagnostics={
            "solver_status": OPTIMAL,
            "binding_index": None,
            "h_I": hI,
            "h_b_terminal": float(spec.h_b(bundle.phi[-1])),
            "ode_count": bundle.ode_count,
        },
    )


# ---------------------------------------------------------------- optimal interpolation


def _coeffs_from_vectors(spec: SafetySpec, phi, q_p, q_b) -> ConstraintCoeffs:
    grad = spec.grad_h(phi)
    a = np.einsum("ij,ij->i", grad, q_p) + spec.alpha(spec.h(phi))
    b = np.einsum("ij,ij->i", grad, q_b - q_p)
    gb = spec.grad_h_b(phi[-1])
    a = np.append(a, gb @ q_p[-1] + spec.alpha_b(spec.h_b(phi[-1])))
    b = np.append(b, gb @ (q_b[-1] - q_p[-1]))
    return ConstraintCoeffs.from_rows(a, b)


def oi_coefficients(spec: SafetySpec, model: ControlAffineModel, k_p: ControllerFn,
                    k_b: ControllerFn, bundle: FlowBundle) -> ConstraintCoeffs:
    """Coefficients from the push-forward vectors ``q_p``, ``q_b``."""
    if bundle.q_p is None or bundle.q_b is None:
        raise ValueError("bundle has no push-forward vectors")
    return _coeffs_from_vectors(spec, bundle.phi, bundle.q_p, bundle.q_b)


def oi_coefficients_from_sensitivity(spec: SafetySpec, model: ControlAffineModel, k_p: ControllerFn,
                                     k_b: ControllerFn, bundle: FlowBundle) -> ConstraintCoeffs:
    """Same coefficients computed with the full sensitivity matrix."""
    if bundle.Phi is None:
        raise ValueError("bundle has no sensitivity matrices")
    x = bundle.phi[0]
    fx, gx = model.f(x), model.g(x)
    f_p = fx + gx @ k_p(x)
    f_cl = fx + gx @ k_b(x)
    return _coeffs_from_vectors(spec, bundle.phi, bundle.Phi @ f_p, bundle.Phi @ f_cl)


def oi_mu_star(coeffs: ConstraintCoeffs) -> tuple[float, int, bool]:
    """Closed-form minimal ``mu``: the largest ``-a_i/b_i`` over rows with ``b_i > 0``.

    Returns ``(mu, binding_index, out_of_domain)``. ``mu`` is clamped to
    ``[0, 1]``; ``out_of_domain`` is set when the unclamped value exceeds
    ``1 + 1e-9`` or when a row with negative slope is violated at ``mu``,
    either of which means no ``mu`` in ``[0, 1]`` satisfies every row.
    Ties go to the smallest index.
    """
    idx = coeffs.positive_set()
    ratios = -coeffs.a[idx] / coeffs.b[idx]
    k = int(np.argmax(ratios))  # first occurrence on ties
    mu = float(ratios[k])
    out = mu > 1.0 + OUT_OF_DOMAIN_TOL
    mu = min(max(mu, 0.0), 1.0)
    if not out:
        # a row with b_i < 0 can still be violated at mu*: no mu in [0, 1] is feasible
        live = np.abs(coeffs.b) > B_TOL * (1.0 + np.abs(coeffs.a))
        out = bool(np.any(coeffs.a[live] + coeffs.b[live] * mu < -OUT_OF_DOMAIN_TOL))
    return mu, int(idx[k]), bool(out)


@dataclass
class KktReport:
    primal: float
    dual: float
    complementary: float
    stationarity: float
    violations: list
    uncontrollable_deficit: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations


def kkt_check(coeffs: ConstraintCoeffs, mu_star: float, binding_index: int,
              tol: float = 1e-9, dual_tol: float = 1e-12) -> KktReport:
    """Check the optimality conditions of ``min mu^2`` over the rows with nonzero slope.

    Only the binding row carries a multiplier ``lambda_j = -a_j / b_j^2``.
    Input-independent rows are reported through ``uncontrollable_deficit``.
    """
    a, b = coeffs.a, coeffs.b
    live = np.abs(b) > B_TOL * (1.0 + np.abs(a))
    slack = a + b * mu_star
    primal = float(np.min(slack[live])) if np.any(live) else 0.0
    j = binding_index
    bj = b[j]
    lam = -a[j] / (bj * bj) if bj != 0 else np.nan
    comp = abs(a[j] + bj * mu_star)
    stat = abs(mu_star - lam * bj) if np.isfinite(lam) else np.inf
    violations = []
    if primal < -tol:
        violations.append(f"primal feasibility {primal:.3e}")
    if not lam >= -dual_tol:
        violations.append(f"dual feasibility lambda={lam:.3e}")
    if comp > tol:
        violations.append(f"complementary slackness {comp:.3e}")
    if stat > tol:
        violations.append(f"stationarity {stat:.3e}")
    return KktReport(primal, float(lam), float(comp), float(stat), violations,
                     coeffs.uncontrollable_deficit())


def oi_controller(spec: SafetySpec, model: ControlAffineModel, k_p: ControllerFn,
                  k_b: ControllerFn, grid: HorizonGrid, x, check_kkt: bool = True) -> ControllerOutput:
    """Optimally interpolated controller from ``3n`` push-forward ODEs."""
    x = np.asarray(x, dtype=float)
    bundle = integrate_push_forward(model, k_p, k_b, x, grid)
    coeffs = oi_coefficients(spec, model, k_p, k_b, bundle)
    mu, j, out = oi_mu_star(coeffs)
    idx = coeffs.positive_set()
    mu_unclamped = float(np.max(-coeffs.a[idx] / coeffs.b[idx]))
    up, ub = k_p(x), k_b(x)
    if out:
        mu = 1.0
    if mu == 0.0:
        u = up
    elif mu == 1.0:
        u = ub
    else:
        u = up + mu * (ub - up)
    diag = {
        "solver_status": "OutOfDomain" if out else OPTIMAL,
        "binding_index": j,
        "out_of_domain": out,
        "mu_unclamped": mu_unclamped,
        "coeffs": coeffs,
        "h_I": h_I_eval(spec, bundle),
        "h_b_terminal": float(spec.h_b(bundle.phi[-1])),
        "uncontrollable_deficit": coeffs.uncontrollable_deficit(),
        "ode_count": bundle.ode_count,
    }
    if check_kkt and not out:
        diag["kkt"] = kkt_check(coeffs, mu, j)
    return ControllerOutput(u=u, mu=mu, diagnostics=diag)
