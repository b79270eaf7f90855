"""Fixed-step RK4 integration of the backup flow and its variational equations.

All three products (flow, full sensitivity matrix, push-forward vectors) come
from one augmented system

    x'  = f(x) + g(x) k_b(x)
    C'  = F_cl(x) C

where ``C`` is an ``n x k`` block of tangent vectors: ``k = 0`` for the flow
alone, ``k = n`` with ``C(0) = I`` for the sensitivity matrix, ``k = 2`` with
``C(0) = [f_p(x), f_cl(x)]`` for the push-forward vectors.

When every model callable is a numba dispatcher the kernel runs compiled;
otherwise the identical source runs as plain Python.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit
from numba.extending import is_jitted

from .core import ControlAffineModel, ControllerFn, DivergedFlow

FLOW = "flow"
SENSITIVITY = "sensitivity"
PUSH_FORWARD = "push_forward"


def ode_count(n: int, kind: str) -> int:
    """Number of scalar ODEs advanced per integration for ``kind``."""
    if kind == FLOW:
        return n
    if kind == SENSITIVITY:
        return n + n * n
    if kind == PUSH_FORWARD:
        return 3 * n
    raise ValueError(f"unknown integration kind {kind!r}")


@dataclass(frozen=True)
class HorizonGrid:
    """Backup horizon ``T`` split into ``N`` constraint intervals of ``T/N``,
    each integrated with substeps of ``dt_int``."""

    T: float
    N: int
    dt_int: float

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be an integer >= 1, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        if not (math.isfinite(self.dt_int) and self.dt_int > 0):
            raise ValueError(f"dt_int must be positive, got {self.dt_int}")
        ratio = self.delta / self.dt_int
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError(f"dt_int={self.dt_int} does not divide delta={self.delta}")

    @property
    def delta(self) -> float:
        return self.T / self.N

    @property
    def substeps(self) -> int:
        return int(round(self.delta / self.dt_int))

    @property
    def step(self) -> float:
        # exact substep so that substeps * step == delta
        return self.delta / self.substeps

    @property
    def taus(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.delta


@dataclass(frozen=True)
class FlowBundle:
    """Backup-flow samples on the horizon grid.

    ``phi`` has shape ``(N+1, n)``; ``Phi`` (if present) ``(N+1, n, n)``;
    ``q_p`` and ``q_b`` (if present) ``(N+1, n)``.
    """

    grid: HorizonGrid
    phi: np.ndarray
    Phi: Optional[np.ndarray] = None
    q_p: Optional[np.ndarray] = None
    q_b: Optional[np.ndarray] = None
    ode_count: int = 0


def _augmented_rhs(f, g, kb, jac, pm, pb, x, c):
    dx = f(x, pm) + g(x, pm) @ kb(x, pb)
    if c.shape[1] == 0:
        return dx, c.copy()
    return dx, jac(x, pm) @ c


def _rk4_augmented(rhs, f, g, kb, jac, pm, pb, x0, c0, h, substeps, intervals):
    n = x0.shape[0]
    k = c0.shape[1]
    xs = np.empty((intervals + 1, n))
    cs = np.empty((intervals + 1, n, k))
    x = x0.copy()
    c = c0.copy()
    xs[0] = x
    cs[0] = c
    for i in range(intervals):
        for _ in range(substeps):
            k1x, k1c = rhs(f, g, kb, jac, pm, pb, x, c)
            k2x, k2c = rhs(f, g, kb, jac, pm, pb, x + 0.5 * h * k1x, c + 0.5 * h * k1c)
            k3x, k3c = rhs(f, g, kb, jac, pm, pb, x + 0.5 * h * k2x, c + 0.5 * h * k2c)
            k4x, k4c = rhs(f, g, kb, jac, pm, pb, x + h * k3x, c + h * k3c)
            x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            c = c + (h / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
        xs[i + 1] = x
        cs[i + 1] = c
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(c))):
            return xs, cs, i + 1
    return xs, cs, -1


_augmented_rhs_jit = njit(_augmented_rhs)
_rk4_augmented_jit = njit(_rk4_augmented)


def _propagate(model: ControlAffineModel, backup: ControllerFn, x, c0, grid: HorizonGrid):
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ValueError(f"state has shape {x.shape}, model expects ({model.n},)")
    if not np.all(np.isfinite(x)):
        raise DivergedFlow(f"initial state is not finite: {x}")
    c0 = np.ascontiguousarray(c0, dtype=float)
    fns = (model.drift, model.actuation, backup.k, model.closed_loop_jacobian)
    pm = np.ascontiguousarray(model.params)
    pb = np.ascontiguousarray(backup.params)
    if all(is_jitted(fn) for fn in fns):
        xs, cs, bad = _rk4_augmented_jit(
            _augmented_rhs_jit, *fns, pm, pb, x, c0, grid.step, grid.substeps, grid.N
        )
    else:
        xs, cs, bad = _rk4_augmented(
            _augmented_rhs, *fns, pm, pb, x, c0, grid.step, grid.substeps, grid.N
        )
    if bad >= 0:
        raise DivergedFlow(f"backup flow diverged at tau={bad * grid.delta:g} from x={x}")
    xs[0] = x  # exact initial sample
    return xs, cs


def integrate_flow(model: ControlAffineModel, backup: ControllerFn, x, grid: HorizonGrid) -> FlowBundle:
    """Sample the backup flow at ``tau_i = i * T/N`` for ``i = 0..N``."""
    xs, _ = _propagate(model, backup, x, np.zeros((model.n, 0)), grid)
    return FlowBundle(grid=grid, phi=xs, ode_count=ode_count(model.n, FLOW))


def integrate_sensitivity(model: ControlAffineModel, backup: ControllerFn, x, grid: HorizonGrid) -> FlowBundle:
    """Flow plus the full sensitivity matrix (``n + n^2`` ODEs)."""
    xs, cs = _propagate(model, backup, x, np.eye(model.n), grid)
    cs[0] = np.eye(model.n)
    return FlowBundle(grid=grid, phi=xs, Phi=cs, ode_count=ode_count(model.n, SENSITIVITY))


def integrate_push_forward(
    model: ControlAffineModel,
    primary: ControllerFn,
    backup: ControllerFn,
    x,
    grid: HorizonGrid,
) -> FlowBundle:
    """Flow plus the push-forward of the primary and backup vector fields (``3n`` ODEs)."""
    x = np.asarray(x, dtype=float)
    fx, gx = model.f(x), model.g(x)
    f_p = fx + gx @ primary(x)
    f_cl = fx + gx @ backup(x)
    xs, cs = _propagate(model, backup, x, np.column_stack([f_p, f_cl]), grid)
    q_p = np.ascontiguousarray(cs[:, :, 0])
    q_b = np.ascontiguousarray(cs[:, :, 1])
    q_p[0], q_b[0] = f_p, f_cl
    return FlowBundle(grid=grid, phi=xs, q_p=q_p, q_b=q_b, ode_count=ode_count(model.n, PUSH_FORWARD))


def rk4_step(fun, x, h: float) -> np.ndarray:
    """One classical RK4 step of ``x' = fun(x)``."""
    k1 = fun(x)
    k2 = fun(x + 0.5 * h * k1)
    k3 = fun(x + 0.5 * h * k2)
    k4 = fun(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
