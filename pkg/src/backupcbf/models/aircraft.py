"""Fixed-wing aircraft with first-order roll-rate and load-factor response.

State ``(phi, theta, psi, p_N, p_E, H, P, N_z)``: roll, pitch, yaw [rad],
north/east position and altitude [m], roll rate [rad/s], normal load factor.
Inputs are the commanded roll rate and load factor.

The backup controller flies a coordinated turn at bank ``phi_star`` while
holding altitude. Its commands pass through a smooth two-sided softplus
saturation so that the closed loop stays differentiable.

Turn geometry: ``rho`` is stored as the positive turn radius and
``turn_sign = sign(phi_star)`` carries the direction. With that convention the
closed-form backup position is ``p + s*rho*(n(psi) - n(psi_b))`` and the
worst-case distance of the turn circle from the geofence is
``h + rho*(s*n_g.n(psi) - 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..core import ControlAffineModel, ControllerFn, InputBox, NumericalError, SafetySpec
from .double_integrator import smooth_min, smooth_min_weights

PHI, THETA, PSI, PN, PE, H_ALT, P_RATE, NZ = range(8)

# params layout shared by dynamics, backup law and closed-loop Jacobian
(I_VT, I_GD, I_TAUP, I_TAUZ, I_PHISTAR, I_HSTAR, I_KPHI, I_KP, I_KN, I_KH, I_KTHETA,
 I_U1LO, I_U1HI, I_U2LO, I_U2HI, I_BETA) = range(16)
N_PARAMS = 16


class GimbalSingularity(NumericalError):
    """Pitch too close to +-pi/2 for the Euler-angle kinematics."""


@njit(cache=True)
def _softplus(z, beta):
    bz = beta * z
    if bz > 30.0:
        return z + math.log1p(math.exp(-bz)) / beta
    return math.log1p(math.exp(bz)) / beta


@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def smooth_saturate(v, lo, hi, beta):
    """``lo + sp(v - lo) - sp(v - hi)``: strictly inside ``(lo, hi)``, C-infinity.

    The final clamp only absorbs the last-ulp cancellation error in the tails.
    """
    return min(max(lo + _softplus(v - lo, beta) - _softplus(v - hi, beta), lo), hi)


@njit(cache=True)
def smooth_saturate_slope(v, lo, hi, beta):
    return _sigmoid(beta * (v - lo)) - _sigmoid(beta * (v - hi))


@njit(cache=True)
def aircraft_drift(x, p):
    vt, gd = p[I_VT], p[I_GD]
    phi, th, psi = x[PHI], x[THETA], x[PSI]
    P, nz = x[P_RATE], x[NZ]
    cth = math.cos(th)
    out = np.empty(8)
    out[0] = P + nz * gd / vt * math.sin(phi) * math.tan(th)
    out[1] = gd / vt * (nz * math.cos(phi) - cth)
    out[2] = nz * gd * math.sin(phi) / (vt * cth)
    out[3] = vt * cth * math.cos(psi)
    out[4] = vt * cth * math.sin(psi)
    out[5] = vt * math.sin(th)
    out[6] = -P / p[I_TAUP]
    out[7] = -nz / p[I_TAUZ]
    return out


@njit(cache=True)
def aircraft_actuation(x, p):
    out = np.zeros((8, 2))
    out[6, 0] = 1.0 / p[I_TAUP]
    out[7, 1] = 1.0 / p[I_TAUZ]
    return out


@njit(cache=True)
def _turn_commands(x, p, phi_ref):
    """Unsaturated roll-rate and load-factor commands for bank ``phi_ref``."""
    nz_ref = 1.0 / math.cos(phi_ref)
    v1 = x[P_RATE] + p[I_TAUP] * (p[I_KPHI] * (phi_ref - x[PHI]) - p[I_KP] * x[P_RATE])
    v2 = x[NZ] + p[I_TAUZ] * (
        p[I_KN] * (nz_ref - x[NZ]) + p[I_KH] * (p[I_HSTAR] - x[H_ALT]) - p[I_KTHETA] * x[THETA]
    )
    return v1, v2


@njit(cache=True)
def aircraft_backup_law(x, p):
    v1, v2 = _turn_commands(x, p, p[I_PHISTAR])
    out = np.empty(2)
    out[0] = smooth_saturate(v1, p[I_U1LO], p[I_U1HI], p[I_BETA])
    out[1] = smooth_saturate(v2, p[I_U2LO], p[I_U2HI], p[I_BETA])
    return out


@njit(cache=True)
def aircraft_closed_loop_jacobian(x, p):
    vt, gd, taup, tauz = p[I_VT], p[I_GD], p[I_TAUP], p[I_TAUZ]
    phi, th, psi = x[PHI], x[THETA], x[PSI]
    nz = x[NZ]
    sphi, cphi = math.sin(phi), math.cos(phi)
    sth, cth = math.sin(th), math.cos(th)
    spsi, cpsi = math.sin(psi), math.cos(psi)
    tth = sth / cth
    k = gd / vt
    J = np.zeros((8, 8))
    J[0, PHI] = nz * k * cphi * tth
    J[0, THETA] = nz * k * sphi / (cth * cth)
    J[0, P_RATE] = 1.0
    J[0, NZ] = k * sphi * tth
    J[1, PHI] = -k * nz * sphi
    J[1, THETA] = k * sth
    J[1, NZ] = k * cphi
    J[2, PHI] = nz * k * cphi / cth
    J[2, THETA] = nz * k * sphi * sth / (cth * cth)
    J[2, NZ] = k * sphi / cth
    J[3, THETA] = -vt * sth * cpsi
    J[3, PSI] = -vt * cth * spsi
    J[4, THETA] = -vt * sth * spsi
    J[4, PSI] = vt * cth * cpsi
    J[5, THETA] = vt * cth
    J[6, P_RATE] = -1.0 / taup
    J[7, NZ] = -1.0 / tauz
    # input channels through the saturated backup law
    v1, v2 = _turn_commands(x, p, p[I_PHISTAR])
    s1 = smooth_saturate_slope(v1, p[I_U1LO], p[I_U1HI], p[I_BETA]) / taup
    s2 = smooth_saturate_slope(v2, p[I_U2LO], p[I_U2HI], p[I_BETA]) / tauz
    J[6, PHI] += -s1 * taup * p[I_KPHI]
    J[6, P_RATE] += s1 * (1.0 - taup * p[I_KP])
    J[7, NZ] += s2 * (1.0 - tauz * p[I_KN])
    J[7, H_ALT] += -s2 * tauz * p[I_KH]
    J[7, THETA] += -s2 * tauz * p[I_KTHETA]
    return J


def _wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class AircraftParams:
    """Physical constants, gains and geofence geometry for the aircraft scenario.

    Physical constants and the turn bank angle are the published values;
    gains, band constants, smoothing and the geofence layout are tunable
    defaults chosen for this package.
    """

    V_T: float = 200.0
    g_D: float = 9.81
    tau_p: float = 1.0
    tau_z: float = 1.0
    phi_star: float = -math.pi / 4
    H_star: float = 10_000.0
    K_phi: float = 4.0
    K_p: float = 2.0
    K_N: float = 1.0
    K_H: float = 0.01
    K_theta: float = 8.0
    K_psi: float = 1.0
    u1_bounds: tuple = (-math.pi / 2, math.pi / 2)
    u2_bounds: tuple = (-1.0, 4.0)
    saturation_beta: float = 20.0
    geofence_point: tuple = (12_000.0, 0.0)
    geofence_normal: tuple = (-1.0, 0.0)
    c1: float = 0.2
    c2: float = 0.1
    c3: float = 50.0
    c4: float = 0.2
    c5: float = 0.2
    c6: float = 200.0
    kappa: float = 50.0
    setpoint: tuple = (40_000.0, -10_000.0)

    def __post_init__(self):
        positive = ("V_T", "g_D", "tau_p", "tau_z", "H_star", "K_phi", "K_p", "K_N", "K_H",
                    "K_theta", "K_psi", "saturation_beta", "c1", "c2", "c3", "c4", "c5", "c6",
                    "kappa")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < abs(self.phi_star) <= math.pi / 4 + 1e-12:
            raise ValueError("phi_star must lie in [-pi/4, pi/4] and be nonzero")
        for lo, hi in (self.u1_bounds, self.u2_bounds):
            if not lo < hi:
                raise ValueError("input bounds require lower < upper")
        n_g = np.asarray(self.geofence_normal, dtype=float)
        if abs(np.linalg.norm(n_g) - 1.0) > 1e-9:
            raise ValueError("geofence normal must be a unit vector")

    @property
    def turn_radius(self) -> float:
        return self.V_T**2 / (self.g_D * abs(math.tan(self.phi_star)))

    @property
    def turn_sign(self) -> float:
        return math.copysign(1.0, self.phi_star)

    @property
    def nz_star(self) -> float:
        return 1.0 / math.cos(self.phi_star)

    @property
    def turn_period(self) -> float:
        return 2.0 * math.pi * self.turn_radius / self.V_T

    def packed(self) -> np.ndarray:
        p = np.empty(N_PARAMS)
        p[I_VT], p[I_GD], p[I_TAUP], p[I_TAUZ] = self.V_T, self.g_D, self.tau_p, self.tau_z
        p[I_PHISTAR], p[I_HSTAR] = self.phi_star, self.H_star
        p[I_KPHI], p[I_KP], p[I_KN], p[I_KH], p[I_KTHETA] = (
            self.K_phi, self.K_p, self.K_N, self.K_H, self.K_theta)
        p[I_U1LO], p[I_U1HI] = self.u1_bounds
        p[I_U2LO], p[I_U2HI] = self.u2_bounds
        p[I_BETA] = self.saturation_beta
        return p


class AircraftSets:
    """Geofence barrier ``h``, the turn-clearance barrier ``h_6``, the band
    functions ``h_1..h_5`` and their smooth minimum ``h_b``.

    The bands mix squared angles and metres, so ``h_b`` takes the smooth
    minimum of the rescaled bands ``h_i / c_i^2`` (``h_6 / c_6``). Without the
    rescaling the metre-valued ``h_6`` would only enter ``h_b`` within about
    ``1/kappa`` of the angular bands.
    """

    def __init__(self, prm: AircraftParams):
        self.prm = prm
        self.p_g = np.asarray(prm.geofence_point, dtype=float)
        self.n_g = np.asarray(prm.geofence_normal, dtype=float)
        self.rho = prm.turn_radius
        self.s = prm.turn_sign

    def h(self, x):
        x = np.asarray(x, dtype=float)
        return (x[..., PN] - self.p_g[0]) * self.n_g[0] + (x[..., PE] - self.p_g[1]) * self.n_g[1]

    def grad_h(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., PN] = self.n_g[0]
        out[..., PE] = self.n_g[1]
        return out

    def h6(self, x):
        x = np.asarray(x, dtype=float)
        psi = x[..., PSI]
        ng_dot_n = -self.n_g[0] * np.sin(psi) + self.n_g[1] * np.cos(psi)
        return self.h(x) + self.rho * (self.s * ng_dot_n - 1.0) - self.prm.c6

    def bands(self, x):
        """``h_1..h_6`` stacked on the last axis."""
        x = np.asarray(x, dtype=float)
        prm = self.prm
        return np.stack(
            [
                prm.c1**2 - (prm.phi_star - x[..., PHI]) ** 2,
                prm.c2**2 - x[..., THETA] ** 2,
                prm.c3**2 - (prm.H_star - x[..., H_ALT]) ** 2,
                prm.c4**2 - x[..., P_RATE] ** 2,
                prm.c5**2 - (prm.nz_star - x[..., NZ]) ** 2,
                self.h6(x),
            ],
            axis=-1,
        )

    def band_gradients(self, x):
        x = np.asarray(x, dtype=float)
        prm = self.prm
        grads = np.zeros(x.shape[:-1] + (6, 8))
        grads[..., 0, PHI] = 2.0 * (prm.phi_star - x[..., PHI])
        grads[..., 1, THETA] = -2.0 * x[..., THETA]
        grads[..., 2, H_ALT] = 2.0 * (prm.H_star - x[..., H_ALT])
        grads[..., 3, P_RATE] = -2.0 * x[..., P_RATE]
        grads[..., 4, NZ] = 2.0 * (prm.nz_star - x[..., NZ])
        psi = x[..., PSI]
        grads[..., 5, :] = self.grad_h(x)
        grads[..., 5, PSI] = self.rho * self.s * (
            -self.n_g[0] * np.cos(psi) - self.n_g[1] * np.sin(psi))
        return grads

    @property
    def band_scale(self) -> np.ndarray:
        """Positive divisors that bring every band to a unit scale before the
        smooth minimum; they leave each zero-superlevel set unchanged."""
        prm = self.prm
        return 1.0 / np.array([prm.c1**2, prm.c2**2, prm.c3**2, prm.c4**2, prm.c5**2, prm.c6])

    def h_b(self, x):
        return smooth_min(self.bands(x) * self.band_scale, self.prm.kappa)

    def grad_h_b(self, x):
        scale = self.band_scale
        w = smooth_min_weights(self.bands(x) * scale, self.prm.kappa) * scale
        return np.einsum("...i,...ij->...j", w, self.band_gradients(x))


def check_pitch(x) -> None:
    if abs(math.cos(float(np.asarray(x)[THETA]))) < 1e-6:
        raise GimbalSingularity(f"pitch {float(np.asarray(x)[THETA])} rad is at the Euler singularity")


def aircraft_f(x, prm: AircraftParams = AircraftParams()) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    check_pitch(x)
    return aircraft_drift(x, prm.packed())


def aircraft_g(x, prm: AircraftParams = AircraftParams()) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    check_pitch(x)
    return aircraft_actuation(x, prm.packed())


def aircraft_backup_control(x, prm: AircraftParams = AircraftParams()) -> np.ndarray:
    return aircraft_backup_law(np.asarray(x, dtype=float), prm.packed())


def backup_flow_position_closed_form(x, tau, prm: AircraftParams = AircraftParams()) -> np.ndarray:
    """Position along the coordinated turn for ``x`` in the backup set.

    Returns ``(p_N, p_E)``; ``tau`` may be an array, giving shape ``(len(tau), 2)``.
    """
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    rho, s = prm.turn_radius, prm.turn_sign
    psi = x[PSI]
    psi_b = psi + s * (prm.V_T / rho) * tau
    n0 = np.array([-math.sin(psi), math.cos(psi)])
    n_b = np.stack([-np.sin(psi_b), np.cos(psi_b)], axis=-1)
    return x[PN:PE + 1] + s * rho * (n0 - n_b)


def make_nominal_law(prm: AircraftParams):
    """Pursuit autopilot toward ``prm.setpoint`` using the turn law structure."""
    packed = prm.packed()
    target = np.asarray(prm.setpoint, dtype=float)
    phi_max = abs(prm.phi_star)

    def nominal(x, p=None):
        x = np.asarray(x, dtype=float)
        d_n = target[0] - x[PN]
        d_e = target[1] - x[PE]
        if d_n == 0.0 and d_e == 0.0:
            raise ValueError("nominal setpoint coincides with the aircraft position")
        psi_ref = math.atan2(d_e, d_n)
        phi_ref = prm.K_psi * _wrap_angle(psi_ref - x[PSI]) * prm.V_T / prm.g_D
        phi_ref = min(max(phi_ref, -phi_max), phi_max)
        v1, v2 = _turn_commands(x, packed, phi_ref)
        return np.array([
            smooth_saturate(v1, packed[I_U1LO], packed[I_U1HI], packed[I_BETA]),
            smooth_saturate(v2, packed[I_U2LO], packed[I_U2HI], packed[I_BETA]),
        ])

    return nominal


def in_backup_set_state(psi, p_n, p_e, prm: AircraftParams = AircraftParams()) -> np.ndarray:
    """State on the coordinated turn with the given heading and position."""
    return np.array([prm.phi_star, 0.0, psi, p_n, p_e, prm.H_star, 0.0, prm.nz_star])


def trim_state(p_n=0.0, p_e=0.0, psi=0.0, prm: AircraftParams = AircraftParams()) -> np.ndarray:
    """Wings-level, constant-altitude flight."""
    return np.array([0.0, 0.0, psi, p_n, p_e, prm.H_star, 0.0, 1.0])


def aircraft_scenario(prm: AircraftParams | None = None, alpha: float = 1.0, alpha_b: float = 1.0):
    from . import PlantModel

    prm = prm or AircraftParams()
    box = InputBox([prm.u1_bounds[0], prm.u2_bounds[0]], [prm.u1_bounds[1], prm.u2_bounds[1]])
    packed = prm.packed()
    model = ControlAffineModel(
        n=8,
        m=2,
        drift=aircraft_drift,
        actuation=aircraft_actuation,
        input_box=box,
        closed_loop_jacobian=aircraft_closed_loop_jacobian,
        params=packed,
        state_check=check_pitch,
    )
    backup = ControllerFn(aircraft_backup_law, box, "backup", params=packed)
    primary = ControllerFn(make_nominal_law(prm), box, "primary")
    sets = AircraftSets(prm)
    safety = SafetySpec(sets.h, sets.grad_h, sets.h_b, sets.grad_h_b,
                        alpha_gain=alpha, alpha_b_gain=alpha_b)
    return PlantModel(
        name="aircraft",
        model=model,
        safety=safety,
        primary=primary,
        backup=backup,
        state_labels=("phi", "theta", "psi", "p_N", "p_E", "H", "P", "N_z"),
        extras={"params": prm, "sets": sets},
    )


_DEFAULT_SETS = None


def _default_sets() -> AircraftSets:
    global _DEFAULT_SETS
    if _DEFAULT_SETS is None:
        _DEFAULT_SETS = AircraftSets(AircraftParams())
    return _DEFAULT_SETS


def aircraft_h(x):
    return _default_sets().h(x)


def aircraft_h6(x):
    return _default_sets().h6(x)


def aircraft_hb(x):
    return _default_sets().h_b(x)


def aircraft_nominal_control(x, prm: AircraftParams = AircraftParams()) -> np.ndarray:
    return make_nominal_law(prm)(x)
