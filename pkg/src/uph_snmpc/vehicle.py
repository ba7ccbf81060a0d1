"""Dynamic nonlinear single-track vehicle with Pacejka lateral tires.

States are stored in the last axis of arrays, in the order

    x_pos, y_pos, psi, v_lon, v_lat, psi_dot, delta_f, a

and controls as ``(j, omega_f)``. Every function broadcasts over leading axes
so whole sample ensembles and horizons are evaluated in one call.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

N_X = 8
N_U = 2
X_POS, Y_POS, PSI, V_LON, V_LAT, PSI_DOT, DELTA_F, ACC = range(N_X)
JERK, OMEGA_F = range(N_U)
STATE_NAMES = ("x_pos", "y_pos", "psi", "v_lon", "v_lat", "psi_dot", "delta_f", "a")
CONTROL_NAMES = ("j", "omega_f")

V_INTERFACE_MAX = 37.5
V_SWITCH = 11.0
AX_DECEL = (4.5, 3.5)
AX_ACCEL = (3.0, 2.5)
SIGN_BLEND_WIDTH = 0.2

PARAM_FILE_KEYS = (
    "m", "I_z", "l_f", "l_r",
    "B_f", "C_f", "D_f", "E_f", "B_r", "C_r", "D_r", "E_r",
    "fr0", "fr1", "fr4", "rho", "S", "C_d", "g",
    "F_max_f", "F_max_r", "v_eps", "a_y_max",
)


class IntegrationError(FloatingPointError):
    """Raised when integration produces non-finite states."""


class VehicleState(NamedTuple):
    x_pos: float
    y_pos: float
    psi: float
    v_lon: float
    v_lat: float
    psi_dot: float
    delta_f: float
    a: float

    def to_array(self) -> np.ndarray:
        return np.array(self, dtype=float)

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(*(float(v) for v in np.asarray(arr).reshape(N_X)))


class VehicleControl(NamedTuple):
    j: float
    omega_f: float

    def to_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


@dataclass(frozen=True)
class VehicleParams:
    m: float
    I_z: float
    l_f: float
    l_r: float
    B_f: float
    C_f: float
    D_f: float
    E_f: float
    B_r: float
    C_r: float
    D_r: float
    E_r: float
    fr0: float
    fr1: float
    fr4: float
    rho: float
    S: float
    C_d: float
    g: float
    F_max_f: float
    F_max_r: float
    v_eps: float
    a_y_max: float
    clip_ratio: float = 0.98

    def __post_init__(self):
        for name in ("m", "I_z", "l_f", "l_r", "g", "F_max_f", "F_max_r", "v_eps", "a_y_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"vehicle parameter {name} must be strictly positive")
        if not 0 < self.clip_ratio < 1:
            raise ValueError("clip_ratio must lie in (0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "VehicleParams":
        missing = [k for k in PARAM_FILE_KEYS if k not in data]
        unknown = [k for k in data if k not in PARAM_FILE_KEYS and k != "clip_ratio"]
        if missing or unknown:
            raise ValueError(f"vehicle parameter file: missing keys {missing}, unknown keys {unknown}")
        return cls(**{k: float(v) for k, v in data.items()})

    @classmethod
    def from_json(cls, path) -> "VehicleParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def default(cls) -> "VehicleParams":
        text = resources.files("uph_snmpc").joinpath("data/vehicle_default.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if k in PARAM_FILE_KEYS}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def vertical_loads(params: VehicleParams) -> tuple[float, float]:
    wheelbase = params.l_f + params.l_r
    weight = params.m * params.g
    return weight * params.l_r / wheelbase, weight * params.l_f / wheelbase


def slip_angles(x, params: VehicleParams):
    x = np.asarray(x, dtype=float)
    v_lon = np.maximum(x[..., V_LON], params.v_eps)
    alpha_f = x[..., DELTA_F] - np.arctan((x[..., V_LAT] + params.l_f * x[..., PSI_DOT]) / v_lon)
    alpha_r = np.arctan((params.l_r * x[..., PSI_DOT] - x[..., V_LAT]) / v_lon)
    return alpha_f, alpha_r


def pacejka(alpha, B, C, D, E):
    ba = B * alpha
    return D * np.sin(C * np.arctan(ba - E * (ba - np.arctan(ba))))


def tire_lateral_force(alpha, axle: str, params: VehicleParams):
    if axle == "front":
        return pacejka(alpha, params.B_f, params.C_f, params.D_f, params.E_f)
    if axle == "rear":
        return pacejka(alpha, params.B_r, params.C_r, params.D_r, params.E_r)
    raise ValueError(f"axle must be 'front' or 'rear', got {axle!r}")


def combined_slip_lateral(F_tire, F_x, F_max, clip_ratio=0.98):
    ratio = np.clip(np.asarray(F_x, dtype=float) / F_max, -clip_ratio, clip_ratio)
    # cos(asin(r)) == sqrt(1 - r^2) on the clipped range
    return F_tire * np.sqrt(1.0 - ratio * ratio)


def rolling_coefficient(speed_kmh, params: VehicleParams):
    r = np.asarray(speed_kmh, dtype=float) / 100.0
    r2 = r * r
    return params.fr0 + params.fr1 * r + params.fr4 * r2 * r2


def longitudinal_forces(x, params: VehicleParams):
    x = np.asarray(x, dtype=float)
    v_lon, v_lat = x[..., V_LON], x[..., V_LAT]
    speed_kmh = 3.6 * np.sqrt(v_lon * v_lon + v_lat * v_lat)
    fr = rolling_coefficient(speed_kmh, params)
    F_zf, F_zr = vertical_loads(params)
    F_aero = 0.5 * params.rho * params.S * params.C_d * v_lon * v_lon
    F_xf = -fr * F_zf
    F_xr = params.m * x[..., ACC] - fr * F_zr - F_aero
    return F_xf, F_xr


def dynamics_rhs(x, u, params: VehicleParams) -> np.ndarray:
    """Time derivative of the state; broadcasts over leading axes of ``x`` and ``u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    psi, v_lon, v_lat = x[..., PSI], x[..., V_LON], x[..., V_LAT]
    psi_dot, delta = x[..., PSI_DOT], x[..., DELTA_F]

    alpha_f, alpha_r = slip_angles(x, params)
    F_xf, F_xr = longitudinal_forces(x, params)
    F_yf = combined_slip_lateral(
        pacejka(alpha_f, params.B_f, params.C_f, params.D_f, params.E_f), F_xf, params.F_max_f, params.clip_ratio
    )
    F_yr = combined_slip_lateral(
        pacejka(alpha_r, params.B_r, params.C_r, params.D_r, params.E_r), F_xr, params.F_max_r, params.clip_ratio
    )

    cos_psi, sin_psi = np.cos(psi), np.sin(psi)
    cos_d, sin_d = np.cos(delta), np.sin(delta)
    front_lat = F_yf * cos_d + F_xf * sin_d

    out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (N_X,)))
    out[..., X_POS] = v_lon * cos_psi - v_lat * sin_psi
    out[..., Y_POS] = v_lon * sin_psi + v_lat * cos_psi
    out[..., PSI] = psi_dot
    out[..., V_LON] = (F_xr - F_yf * sin_d + F_xf * cos_d) / params.m + v_lat * psi_dot
    out[..., V_LAT] = (F_yr + front_lat) / params.m - v_lon * psi_dot
    out[..., PSI_DOT] = (params.l_f * front_lat - params.l_r * F_yr) / params.I_z
    out[..., DELTA_F] = u[..., OMEGA_F]
    out[..., ACC] = u[..., JERK]
    return out


def rk4(rhs, x, u, dt: float, substeps: int = 1) -> np.ndarray:
    """Classical RK4 with zero-order-hold ``u``; no finiteness check."""
    h = dt / substeps
    for _ in range(substeps):
        k1 = rhs(x, u)
        k2 = rhs(x + 0.5 * h * k1, u)
        k3 = rhs(x + 0.5 * h * k2, u)
        k4 = rhs(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def rk4_step(x, u, dt: float, substeps: int, params: VehicleParams) -> np.ndarray:
    """Integrate the vehicle over ``dt`` with ``substeps`` RK4 steps.

    Raises IntegrationError if any resulting component is not finite.
    """
    if not dt > 0 or substeps < 1:
        raise ValueError("need dt > 0 and substeps >= 1")
    x = np.asarray(x, dtype=float)
    out = rk4(lambda xx, uu: dynamics_rhs(xx, uu, params), x, np.asarray(u, dtype=float), dt, substeps)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out.reshape(-1, N_X)).all(axis=1)).ravel()
        raise IntegrationError(f"non-finite state after integration (rows {bad.tolist()})")
    return out


def ax_max(v_lon, mode: str):
    """Longitudinal acceleration limit from the actuator interface tables.

    ``mode`` is ``"accelerating"`` or ``"decelerating"``; speeds are clamped to
    [0, 37.5] and v = 11 m/s belongs to the low-speed branch.
    """
    if mode == "accelerating":
        low, high = AX_ACCEL
    elif mode == "decelerating":
        low, high = AX_DECEL
    else:
        raise ValueError(f"unknown mode {mode!r}")
    v = np.clip(np.asarray(v_lon, dtype=float), 0.0, V_INTERFACE_MAX)
    out = np.where(v <= V_SWITCH, low, high)
    return out if out.ndim else float(out)


def gg_constraint(x, params: VehicleParams):
    """Combined acceleration potential with exact piecewise limits.

    The acceleration table applies for ``a >= 0`` and the deceleration table
    otherwise. Bounds are [0, 1].
    """
    x = np.asarray(x, dtype=float)
    a = x[..., ACC]
    v = x[..., V_LON]
    ax = np.where(a >= 0.0, ax_max(v, "accelerating"), ax_max(v, "decelerating"))
    a_lat = v * x[..., PSI_DOT]
    out = (a / ax) ** 2 + (a_lat / params.a_y_max) ** 2
    return out if out.ndim else float(out)


def gg_longitudinal_weight(x):
    """Blended inverse squared longitudinal limit ``1/a_x,max^2`` used by the smooth g-g map.

    The accelerate/decelerate table selection is blended with a tanh of width
    0.2 m/s^2 around ``a = 0``.
    """
    x = np.asarray(x, dtype=float)
    a = x[..., ACC]
    low = np.clip(x[..., V_LON], 0.0, V_INTERFACE_MAX) <= V_SWITCH
    inv_acc = np.where(low, 1.0 / AX_ACCEL[0] ** 2, 1.0 / AX_ACCEL[1] ** 2)
    inv_dec = np.where(low, 1.0 / AX_DECEL[0] ** 2, 1.0 / AX_DECEL[1] ** 2)
    w = 0.5 * (1.0 + np.tanh(a / SIGN_BLEND_WIDTH))
    return w * inv_acc + (1.0 - w) * inv_dec


def gg_constraint_smooth(x, params: VehicleParams):
    """Differentiable g-g potential used inside the optimal control problem."""
    x = np.asarray(x, dtype=float)
    a = x[..., ACC]
    a_lat = x[..., V_LON] * x[..., PSI_DOT]
    return a * a * gg_longitudinal_weight(x) + (a_lat / params.a_y_max) ** 2
