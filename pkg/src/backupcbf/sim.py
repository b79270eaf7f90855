"""Closed-loop simulation with zero-order hold, trajectory logs and metrics."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controllers import (
    ControllerOutput,
    bcbf_qp_controller,
    blended_controller,
    cbf_filter_closed_form,
    oi_controller,
)
from .core import InputBox, NumericalError
from .integrate import HorizonGrid, rk4_step
from .models import PlantModel

CONTROLLERS = ("cbf", "bcbf_qp", "blended", "oi", "nominal", "backup")
SAFE_CONTROLLERS = ("bcbf_qp", "blended", "oi")


class SimulationAborted(RuntimeError):
    """A numerical failure stopped the run; ``log`` holds the rows recorded so far."""

    def __init__(self, message: str, log: "TrajectoryLog"):
        super().__init__(message)
        self.log = log


def _divides(big: float, small: float) -> bool:
    ratio = big / small
    return round(ratio) >= 1 and abs(ratio - round(ratio)) <= 1e-9 * max(1.0, ratio)


@dataclass(frozen=True)
class SimConfig:
    plant: PlantModel
    controller: str
    x0: np.ndarray
    t_final: float
    dt_ctrl: float
    dt_plant: float
    grid: Optional[HorizonGrid] = None
    eta: float = 10.0
    check_kkt: bool = True

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}; choose from {CONTROLLERS}")
        x0 = np.array(self.x0, dtype=float)
        if x0.shape != (self.plant.n,) or not np.all(np.isfinite(x0)):
            raise ValueError(f"x0 must be a finite vector of length {self.plant.n}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if not (math.isfinite(self.t_final) and self.t_final >= 0):
            raise ValueError("t_final must be nonnegative")
        if not (self.dt_ctrl > 0 and self.dt_plant > 0):
            raise ValueError("dt_ctrl and dt_plant must be positive")
        if not _divides(self.dt_ctrl, self.dt_plant):
            raise ValueError(f"dt_plant={self.dt_plant} does not divide dt_ctrl={self.dt_ctrl}")
        if self.t_final > 0 and not _divides(self.t_final, self.dt_ctrl):
            raise ValueError(f"dt_ctrl={self.dt_ctrl} does not divide t_final={self.t_final}")
        if self.controller in ("bcbf_qp", "blended", "oi") and self.grid is None:
            raise ValueError(f"controller {self.controller!r} needs a horizon grid")
        if self.controller == "blended" and not self.eta > 0:
            raise ValueError("eta must be positive")

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.dt_ctrl))

    @property
    def substeps(self) -> int:
        return int(round(self.dt_ctrl / self.dt_plant))


@dataclass
class TrajectoryLog:
    """One row per control tick, including the final state."""

    n: int
    m: int
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    u: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    h: list = field(default_factory=list)
    h_b: list = field(default_factory=list)
    h_I: list = field(default_factory=list)
    h_b_terminal: list = field(default_factory=list)
    binding_index: list = field(default_factory=list)
    status: list = field(default_factory=list)
    step_wall_us: list = field(default_factory=list)
    kkt: list = field(default_factory=list)
    uncontrollable_deficit: list = field(default_factory=list)
    coeffs: list = field(default_factory=list)
    mu_unclamped: list = field(default_factory=list)
    ode_count: int = 0
    controller: str = ""

    def __len__(self):
        return len(self.t)

    def append(self, t, x, out: ControllerOutput, h, h_b, wall_us):
        d = out.diagnostics
        self.t.append(float(t))
        self.x.append(np.array(x, dtype=float))
        self.u.append(np.array(out.u, dtype=float))
        self.mu.append(np.nan if out.mu is None else float(out.mu))
        self.h.append(float(h))
        self.h_b.append(float(h_b))
        self.h_I.append(np.nan if d.get("h_I") is None else float(d["h_I"]))
        self.h_b_terminal.append(float(d.get("h_b_terminal", np.nan)))
        bi = d.get("binding_index")
        self.binding_index.append(-1 if bi is None else int(bi))
        self.status.append(str(d.get("solver_status", "")))
        self.step_wall_us.append(float(wall_us))
        self.kkt.append(d.get("kkt"))
        self.uncontrollable_deficit.append(float(d.get("uncontrollable_deficit", 0.0)))
        self.coeffs.append(d.get("coeffs"))
        self.mu_unclamped.append(float(d.get("mu_unclamped", np.nan)))

    def arrays(self) -> dict:
        return {
            "t": np.array(self.t),
            "x": np.array(self.x).reshape(-1, self.n),
            "u": np.array(self.u).reshape(-1, self.m),
            "mu": np.array(self.mu),
            "h": np.array(self.h),
            "h_b": np.array(self.h_b),
            "h_I": np.array(self.h_I),
            "binding_index": np.array(self.binding_index, dtype=int),
        }


def make_controller(config: SimConfig):
    plant = config.plant
    spec, model, kp, kb, grid = plant.safety, plant.model, plant.primary, plant.backup, config.grid
    name = config.controller
    if name == "nominal":
        return lambda x: ControllerOutput(u=kp(x), diagnostics={"solver_status": "Nominal"})
    if name == "backup":
        return lambda x: ControllerOutput(u=kb(x), mu=1.0, diagnostics={"solver_status": "Backup"})
    if name == "cbf":
        return lambda x: cbf_filter_closed_form(spec, model, kp, x)
    if name == "bcbf_qp":
        return lambda x: bcbf_qp_controller(spec, model, kp, kb, grid, x)
    if name == "blended":
        return lambda x: blended_controller(spec, model, kp, kb, grid, config.eta, x)
    return lambda x: oi_controller(spec, model, kp, kb, grid, x, check_kkt=config.check_kkt)


def simulate(config: SimConfig) -> TrajectoryLog:
    """Evaluate the controller each tick, hold its output and integrate the plant with RK4."""
    plant = config.plant
    model, spec = plant.model, plant.safety
    controller = make_controller(config)
    log = TrajectoryLog(n=plant.n, m=plant.m, controller=config.controller)
    x = config.x0.copy()
    sub = config.substeps
    h_step = config.dt_ctrl / sub
    for k in range(config.steps + 1):
        t = k * config.dt_ctrl
        try:
            t0 = time.perf_counter()
            out = controller(x)
            wall = (time.perf_counter() - t0) * 1e6
        except NumericalError as exc:
            raise SimulationAborted(f"controller failed at t={t:g}: {exc}", log) from exc
        log.append(t, x, out, spec.h(x), spec.h_b(x), wall)
        if log.ode_count == 0 and "ode_count" in out.diagnostics:
            log.ode_count = int(out.diagnostics["ode_count"])
        if k == config.steps:
            break
        u = np.asarray(out.u, dtype=float)
        fun = lambda z: model.f(z) + model.g(z) @ u  # noqa: E731
        try:
            for _ in range(sub):
                x = rk4_step(fun, x, h_step)
        except NumericalError as exc:
            raise SimulationAborted(f"plant integration failed after t={t:g}: {exc}", log) from exc
        if not np.all(np.isfinite(x)):
            raise SimulationAborted(f"plant state became non-finite after t={t:g}", log)
    return log


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    min_h: float
    min_h_b_terminal: float
    input_violations: int
    u_sign_reversals: tuple
    mu_switch_count: int
    mean_step_wall_us: float
    max_step_wall_us: float
    ode_count_per_step: int
    kkt_violations: int = 0
    out_of_domain_count: int = 0
    max_mu: float = float("nan")
    max_mu_unclamped: float = float("nan")
    worst_uncontrollable_deficit: float = 0.0
    first_contact_time: float = float("nan")

    def as_dict(self) -> dict:
        return {
            "min_h": self.min_h,
            "min_h_b_terminal": self.min_h_b_terminal,
            "input_violations": self.input_violations,
            "u_sign_reversals": list(self.u_sign_reversals),
            "mu_switch_count": self.mu_switch_count,
            "mean_step_wall_us": self.mean_step_wall_us,
            "max_step_wall_us": self.max_step_wall_us,
            "ode_count_per_step": self.ode_count_per_step,
            "kkt_violations": self.kkt_violations,
            "out_of_domain_count": self.out_of_domain_count,
            "max_mu": self.max_mu,
            "max_mu_unclamped": self.max_mu_unclamped,
            "worst_uncontrollable_deficit": self.worst_uncontrollable_deficit,
            "first_contact_time": self.first_contact_time,
        }


def count_sign_reversals(values, threshold: float = 1e-3) -> int:
    """Crossings of zero between samples whose magnitudes both exceed ``threshold``.

    Samples at or below the threshold are skipped, so a slow pass through
    zero counts once.
    """
    last = 0.0
    count = 0
    for v in np.asarray(values, dtype=float):
        if abs(v) <= threshold:
            continue
        s = math.copysign(1.0, v)
        if last != 0.0 and s != last:
            count += 1
        last = s
    return count


def count_mu_switches(mu, level: float = 0.5) -> int:
    mu = np.asarray(mu, dtype=float)
    mu = mu[np.isfinite(mu)]
    if mu.size < 2:
        return 0
    above = mu >= level
    return int(np.count_nonzero(above[1:] != above[:-1]))


def first_contact_index(log: TrajectoryLog, level: float = 0.5) -> int:
    """First tick where the safety layer engages (``mu >= level``); ``-1`` if never."""
    mu = np.asarray(log.mu, dtype=float)
    hits = np.flatnonzero(np.nan_to_num(mu, nan=0.0) >= level)
    return int(hits[0]) if hits.size else -1


def compute_metrics(log: TrajectoryLog, box: InputBox, after_contact: bool = False) -> Metrics:
    """Summary statistics; with ``after_contact`` the reversal count starts at the first engagement."""
    if len(log) == 0:
        raise ValueError("empty log")
    arr = log.arrays()
    u = arr["u"]
    violations = int(np.count_nonzero(np.any((u < box.lower) | (u > box.upper), axis=1)))
    k0 = first_contact_index(log)
    start = max(k0, 0) if after_contact else 0
    if after_contact and k0 < 0:
        start = len(log)
    reversals = tuple(count_sign_reversals(u[start:, j]) for j in range(log.m))
    hbt = np.asarray(log.h_b_terminal, dtype=float)
    hbt = hbt[np.isfinite(hbt)]
    wall = np.asarray(log.step_wall_us)
    mu = np.asarray(log.mu)
    mu_raw = np.asarray(log.mu_unclamped, dtype=float)
    kkt_bad = sum(1 for r in log.kkt if r is not None and not r.ok)
    return Metrics(
        min_h=float(np.min(arr["h"])),
        min_h_b_terminal=float(np.min(hbt)) if hbt.size else float("nan"),
        input_violations=violations,
        u_sign_reversals=reversals,
        mu_switch_count=count_mu_switches(mu),
        mean_step_wall_us=float(np.mean(wall)),
        max_step_wall_us=float(np.max(wall)),
        ode_count_per_step=log.ode_count,
        kkt_violations=kkt_bad,
        out_of_domain_count=sum(1 for s in log.status if s == "OutOfDomain"),
        max_mu=float(np.nanmax(mu)) if np.any(np.isfinite(mu)) else float("nan"),
        max_mu_unclamped=float(np.nanmax(mu_raw)) if np.any(np.isfinite(mu_raw)) else float("nan"),
        worst_uncontrollable_deficit=float(min(log.uncontrollable_deficit, default=0.0)),
        first_contact_time=float(log.t[k0]) if k0 >= 0 else float("nan"),
    )


def max_state_deviation(a: TrajectoryLog, b: TrajectoryLog) -> float:
    xa, xb = a.arrays()["x"], b.arrays()["x"]
    if xa.shape != xb.shape:
        raise ValueError("logs have different lengths or state dimensions")
    return float(np.max(np.abs(xa - xb))) if xa.size else 0.0


def compare_controllers(configs: dict) -> dict:
    """Run each named config; report metrics and pairwise max state deviations."""
    configs = dict(configs)
    if not configs:
        raise ValueError("no configurations given")
    ref = next(iter(configs.values()))
    for name, cfg in configs.items():
        if not (np.array_equal(cfg.x0, ref.x0) and cfg.t_final == ref.t_final and cfg.dt_ctrl == ref.dt_ctrl):
            raise ValueError(f"config {name!r} differs in x0, t_final or dt_ctrl")
    logs = {name: simulate(cfg) for name, cfg in configs.items()}
    metrics = {name: compute_metrics(log, cfg.plant.box, after_contact=True)
               for (name, cfg), log in zip(configs.items(), logs.values())}
    names = list(logs)
    deviation = {}
    for i, p in enumerate(names):
        for q in names[i + 1:]:
            deviation[f"{p}|{q}"] = max_state_deviation(logs[p], logs[q])
    return {"logs": logs, "metrics": metrics, "max_state_deviation": deviation}
