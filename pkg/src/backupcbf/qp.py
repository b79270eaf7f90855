"""Scalar closed-form filter map and a small dense QP solver.

``solve_box_qp`` minimizes ``||u - target||^2`` subject to rows
``c.u + d >= 0`` and an input box, using the dual active-set method of
Goldfarb and Idnani specialized to an identity Hessian. Box bounds are
handled as ordinary rows. The dual method starts from the unconstrained
minimizer and adds violated rows one at a time, so it terminates exactly
and detects infeasibility with a Farkas certificate when a violated row is
a nonpositive combination of the active ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import InputBox

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
MAX_ITERATIONS = "MaxIterations"


def lambda_relu(a: float, b: float) -> float:
    """``0`` if ``b <= 0`` else ``max(0, -a/b)``."""
    if b <= 0.0:
        return 0.0
    return max(0.0, -a / b)


@dataclass(frozen=True)
class LinearConstraintSet:
    """Rows ``C[i] . u + d[i] >= 0`` together with an input box."""

    C: np.ndarray
    d: np.ndarray
    box: InputBox

    def __post_init__(self):
        C = np.array(self.C, dtype=float, ndmin=2, copy=True)
        d = np.array(self.d, dtype=float, ndmin=1, copy=True)
        if C.size == 0:
            C = np.zeros((0, self.box.m))
            d = np.zeros(0)
        if C.shape != (d.shape[0], self.box.m):
            raise ValueError(f"row matrix {C.shape} does not match d {d.shape} and m={self.box.m}")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(d))):
            raise ValueError("constraint coefficients must be finite")
        C.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)

    @classmethod
    def from_rows(cls, rows, box: InputBox) -> "LinearConstraintSet":
        rows = list(rows)
        if not rows:
            return cls(np.zeros((0, box.m)), np.zeros(0), box)
        return cls(np.array([np.atleast_1d(c) for c, _ in rows]), np.array([d for _, d in rows]), box)

    @property
    def rows(self):
        return [(self.C[i], float(self.d[i])) for i in range(self.d.shape[0])]

    def __len__(self):
        return self.d.shape[0]

    def all_rows(self):
        """Rows with the box appended: lower bound of input ``j`` at ``k + 2j``,
        upper bound at ``k + 2j + 1``."""
        m = self.box.m
        eye = np.eye(m)
        Cb = np.empty((2 * m, m))
        db = np.empty(2 * m)
        Cb[0::2], db[0::2] = eye, -self.box.lower
        Cb[1::2], db[1::2] = -eye, self.box.upper
        return np.vstack([self.C, Cb]), np.concatenate([self.d, db])

    def residuals(self, u) -> np.ndarray:
        C, d = self.all_rows()
        return C @ np.asarray(u, dtype=float) + d


@dataclass(frozen=True)
class QpSolution:
    """``active_set`` and ``multipliers`` index the rows of ``all_rows()``.

    ``certificate`` (only for Infeasible) is ``y >= 0`` over those rows with
    ``y.C`` zero up to the dependency tolerance and ``y.d`` negative enough to
    prove infeasibility on the box (see :func:`certificate_margin`).
    """

    u_star: np.ndarray
    active_set: list
    status: str
    multipliers: dict = field(default_factory=dict)
    certificate: np.ndarray | None = None
    iterations: int = 0


def certificate_margin(y, constraints: LinearConstraintSet) -> float:
    """Upper bound of ``y.(C u + d)`` over the box; negative means ``y`` proves infeasibility."""
    C, d = constraints.all_rows()
    yc = np.asarray(y) @ C
    reach = np.maximum(np.abs(constraints.box.lower), np.abs(constraints.box.upper))
    return float(np.asarray(y) @ d + np.abs(yc) @ reach)


def solve_box_qp(target, constraints: LinearConstraintSet, feas_tol: float = 1e-12) -> QpSolution:
    """Minimize ``||u - target||^2`` over the rows and the box."""
    t = np.asarray(target, dtype=float)
    box = constraints.box
    m = box.m
    if t.shape != (m,):
        raise ValueError(f"target has shape {t.shape}, expected ({m},)")
    if m > 8:
        raise ValueError("solve_box_qp supports m <= 8")
    if not np.all(np.isfinite(t)):
        raise ValueError("target must be finite")
    C, d = constraints.all_rows()
    cnorm = np.linalg.norm(C, axis=1)
    scale = 1.0 + np.abs(d) + cnorm
    # rows with a vanishing normal are constants: either always true or a certificate
    degenerate = cnorm <= 1e-12 * (1.0 + np.abs(d))
    bad = np.flatnonzero(degenerate & (d / scale < -feas_tol))
    if bad.size:
        y = np.zeros(C.shape[0])
        y[bad[0]] = 1.0
        return QpSolution(np.minimum(np.maximum(t, box.lower), box.upper), [], INFEASIBLE,
                          certificate=y, iterations=0)

    x = t.copy()
    active: list[int] = []
    lam = np.zeros(0)
    max_iter = 100 * m
    it = 0
    while True:
        s = C @ x + d
        viol = s / scale
        viol[active] = 0.0
        viol[degenerate] = 0.0
        p = int(np.argmin(viol))
        if viol[p] >= -feas_tol:
            u = np.minimum(np.maximum(x, box.lower), box.upper)
            return QpSolution(u, sorted(active), OPTIMAL,
                              {j: float(l) for j, l in zip(active, lam)}, iterations=it)
        lam_p = 0.0
        # move until row p is satisfied, dropping active rows whose multiplier hits zero
        while True:
            it += 1
            if it > max_iter:
                u = np.minimum(np.maximum(x, box.lower), box.upper)
                return QpSolution(u, sorted(active), MAX_ITERATIONS,
                                  {j: float(l) for j, l in zip(active, lam)}, iterations=it)
            n_p = C[p]
            if active:
                N = C[active].T
                r = np.linalg.lstsq(N, n_p, rcond=None)[0]
                z = n_p - N @ r
                # n_p (numerically) in the span of the active normals: no primal step exists
                if len(active) >= m or np.linalg.norm(z) <= 1e-12 * np.linalg.norm(n_p):
                    z = np.zeros(m)
            else:
                r = np.zeros(0)
                z = n_p.copy()
            zz = float(z @ z)  # equals z.n_p; z.z avoids cancellation
            full = np.inf if zz <= 0.0 else -(n_p @ x + d[p]) / zz
            partial, k_drop = np.inf, -1
            # an r_k that is rounding noise next to the largest |r| does not make row k droppable
            r_tol = 1e-12 * float(np.max(np.abs(r))) if len(r) else 0.0
            with np.errstate(over="ignore"):
                for k in range(len(active)):
                    if r[k] > r_tol:
                        ratio = lam[k] / r[k]
                        if ratio < partial:
                            partial, k_drop = ratio, k
            if not np.isfinite(full) and not np.isfinite(partial):
                y = np.zeros(C.shape[0])
                y[p] = 1.0
                for k, j in enumerate(active):
                    y[j] = max(-r[k], 0.0)
                u = np.minimum(np.maximum(x, box.lower), box.upper)
                return QpSolution(u, sorted(active), INFEASIBLE,
                                  {j: float(l) for j, l in zip(active, lam)},
                                  certificate=y, iterations=it)
            step = min(full, partial)
            if np.isfinite(full):
                x = x + step * z
            lam = lam - step * r
            lam_p += step
            if full <= partial:
                active.append(p)
                lam = np.append(lam, lam_p)
                # remove rounding drift: smallest correction putting x back on the active rows,
                # then multipliers from stationarity x - t = N lam
                N = C[active].T
                x = x - np.linalg.lstsq(N.T, N.T @ x + d[active], rcond=None)[0]
                lam = np.linalg.lstsq(N, x - t, rcond=None)[0]
                break
            del active[k_drop]
            lam = np.delete(lam, k_drop)
