"""Shared domain types: input boxes, control-affine models, safety specs, controllers.

Model callables follow one convention so the same functions can run inside
compiled integration kernels: every dynamics function takes ``(x, params)``
where ``params`` is a flat float64 array owned by the model or controller.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value."""


class DivergedFlow(NumericalError):
    """The backup flow (or a quantity integrated with it) left the finite reals."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class InputBox:
    """Axis-aligned input set ``lower <= u <= upper`` (componentwise)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_1d(self.lower))
        hi = _frozen(np.atleast_1d(self.upper))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError("box requires lower < upper in every component")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def m(self) -> int:
        return self.lower.shape[0]

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


def box_project(box: InputBox, u) -> np.ndarray:
    """Clamp ``u`` componentwise into ``box``."""
    u = np.asarray(u, dtype=float)
    if u.shape != box.lower.shape:
        raise ValueError(f"control has shape {u.shape}, box expects {box.lower.shape}")
    return np.minimum(np.maximum(u, box.lower), box.upper)


def alpha_eval(gain: float, r):
    """Linear class-K function ``gain * r`` (extended to negative ``r``)."""
    if not gain > 0:
        raise ValueError(f"class-K gain must be positive, got {gain}")
    return gain * r


@dataclass(frozen=True)
class ControlAffineModel:
    """Dynamics ``xdot = f(x) + g(x) u`` plus the Jacobian of the backup closed loop.

    ``drift``, ``actuation`` and ``closed_loop_jacobian`` take ``(x, params)``.
    The Jacobian is that of ``f + g k_b`` for the backup controller the model
    is paired with; it is supplied analytically by each plant. ``state_check``
    (optional) raises a :class:`NumericalError` for states outside the model's
    domain before ``f`` or ``g`` is evaluated.
    """

    n: int
    m: int
    drift: Callable
    actuation: Callable
    input_box: InputBox
    closed_loop_jacobian: Callable
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))
    state_check: Optional[Callable] = None

    def __post_init__(self):
        object.__setattr__(self, "params", _frozen(self.params))
        if self.input_box.m != self.m:
            raise ValueError("input box dimension does not match m")

    def f(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.state_check is not None:
            self.state_check(x)
        return np.asarray(self.drift(x, self.params))

    def g(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.state_check is not None:
            self.state_check(x)
        return np.asarray(self.actuation(x, self.params))

    def jac_f_cl(self, x) -> np.ndarray:
        return np.asarray(self.closed_loop_jacobian(np.asarray(x, dtype=float), self.params))


@dataclass(frozen=True)
class ControllerFn:
    """Feedback law ``k(x, params)`` whose output is clamped into ``box``."""

    k: Callable
    box: InputBox
    label: str = ""
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))
    state_check: Optional[Callable] = None

    def __post_init__(self):
        object.__setattr__(self, "params", _frozen(self.params))

    def raw(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.k(np.asarray(x, dtype=float), self.params), dtype=float))

    def __call__(self, x) -> np.ndarray:
        return box_project(self.box, self.raw(x))


@dataclass(frozen=True)
class SafetySpec:
    """Safe set ``h >= 0``, backup set ``h_b >= 0`` and the linear class-K gains.

    ``h`` and ``h_b`` accept a single state of shape ``(n,)`` or a stack
    ``(k, n)``; gradients return matching shapes.
    """

    h: Callable
    grad_h: Callable
    h_b: Callable
    grad_h_b: Callable
    alpha_gain: float = 1.0
    alpha_b_gain: float = 1.0

    def __post_init__(self):
        if not self.alpha_gain > 0 or not self.alpha_b_gain > 0:
            raise ValueError("class-K gains must be strictly positive")

    def alpha(self, r):
        return alpha_eval(self.alpha_gain, r)

    def alpha_b(self, r):
        return alpha_eval(self.alpha_b_gain, r)


def eval_closed_loop(model: ControlAffineModel, backup: ControllerFn, x) -> np.ndarray:
    """Backup closed-loop vector field ``f(x) + g(x) k_b(x)``."""
    x = np.asarray(x, dtype=float)
    out = model.f(x) + model.g(x) @ backup(x)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"closed-loop vector field is not finite at x={x}")
    return out


def eval_vector_field(model: ControlAffineModel, x, u) -> np.ndarray:
    return model.f(x) + model.g(x) @ np.asarray(u, dtype=float)


def finite_difference_jacobian(fun: Callable, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``fun`` at ``x`` (columns = input directions)."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    jac = np.empty((f0.shape[0], x.shape[0]))
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = step
        jac[:, j] = (np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2.0 * step)
    return jac


def finite_difference_gradient(fun: Callable, x, step: float = 1e-6) -> np.ndarray:
    return finite_difference_jacobian(lambda z: np.atleast_1d(fun(z)), x, step)[0]
