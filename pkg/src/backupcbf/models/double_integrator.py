"""Double integrator ``x1' = x2, x2' = u`` with ``u in [-1, 1]``.

Safe set is the left half-plane ``-x1 >= 0``. The primary controller pushes
right at full throttle, the backup controller brakes at full throttle, and the
backup set ``{-x1 >= 0, -x2 >= 0}`` is smoothed with log-sum-exp so that its
gradient exists everywhere.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from ..core import ControlAffineModel, ControllerFn, InputBox, SafetySpec

# controller parameter layout: [constant input]
U_PRIMARY = 1.0
U_BACKUP = -1.0


@njit(cache=True)
def di_drift(x, p):
    out = np.empty(2)
    out[0] = x[1]
    out[1] = 0.0
    return out


@njit(cache=True)
def di_actuation(x, p):
    out = np.zeros((2, 1))
    out[1, 0] = 1.0
    return out


@njit(cache=True)
def di_constant_control(x, p):
    out = np.empty(1)
    out[0] = p[0]
    return out


@njit(cache=True)
def di_closed_loop_jacobian(x, p):
    out = np.zeros((2, 2))
    out[0, 1] = 1.0
    return out


def di_h(x):
    x = np.asarray(x, dtype=float)
    return -x[..., 0]


def di_grad_h(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[..., 0] = -1.0
    return out


def smooth_min(values, kappa: float, axis: int = -1):
    """``-(1/kappa) log sum exp(-kappa * v)``: a lower bound on ``min(v)``
    that is within ``log(len)/kappa`` of it."""
    v = -kappa * np.asarray(values, dtype=float)
    vmax = np.max(v, axis=axis, keepdims=True)
    lse = np.squeeze(vmax, axis=axis) + np.log(np.sum(np.exp(v - vmax), axis=axis))
    return -lse / kappa


def smooth_min_weights(values, kappa: float, axis: int = -1):
    """Gradient of :func:`smooth_min` w.r.t. ``values`` (softmax of ``-kappa v``)."""
    v = -kappa * np.asarray(values, dtype=float)
    w = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return w / np.sum(w, axis=axis, keepdims=True)


def make_backup_set(kappa: float):
    def h_b(x):
        x = np.asarray(x, dtype=float)
        return smooth_min(np.stack([-x[..., 0], -x[..., 1]], axis=-1), kappa)

    def grad_h_b(x):
        x = np.asarray(x, dtype=float)
        w = smooth_min_weights(np.stack([-x[..., 0], -x[..., 1]], axis=-1), kappa)
        return -w

    return h_b, grad_h_b


def double_integrator_scenario(
    alpha: float = 1.0,
    alpha_b: float = 1.0,
    kappa: float = 10.0,
):
    """Assemble the double-integrator plant with its controllers and safe sets."""
    from . import PlantModel

    if not kappa > 0:
        raise ValueError("kappa must be positive")
    box = InputBox([-1.0], [1.0])
    model = ControlAffineModel(
        n=2,
        m=1,
        drift=di_drift,
        actuation=di_actuation,
        input_box=box,
        closed_loop_jacobian=di_closed_loop_jacobian,
    )
    primary = ControllerFn(di_constant_control, box, "primary", params=[U_PRIMARY])
    backup = ControllerFn(di_constant_control, box, "backup", params=[U_BACKUP])
    h_b, grad_h_b = make_backup_set(kappa)
    safety = SafetySpec(di_h, di_grad_h, h_b, grad_h_b, alpha_gain=alpha, alpha_b_gain=alpha_b)
    return PlantModel(
        name="double_integrator",
        model=model,
        safety=safety,
        primary=primary,
        backup=backup,
        state_labels=("x1", "x2"),
    )
