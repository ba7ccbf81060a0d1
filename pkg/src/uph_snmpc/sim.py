"""Closed-loop simulation: noisy measurements, filtering, RTI control, plant integration."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ocp import OcpConfig, build_nominal_problem, build_snmpc_problem, make_collocation
from .sqp import initial_iterate, rti_step, warm_start_shift
from .track import ProjectionError, ReferenceTrajectory, lateral_deviation, reference_window
from .vehicle import ACC, N_U, N_X, STATE_NAMES, V_LON, VehicleParams, gg_constraint, rk4_step

CONTROLLERS = ("nominal", "snmpc")
FILTER_WINDOWS = (1, 1, 4, 2, 2, 3, 4, 2)
SIGMA_SIM_NORMAL = (0.1, 0.1, 0.05, 0.8, 0.35, 0.035, 0.01)
NOISY_STATES = tuple(i for i in range(N_X) if i != ACC)
PLANT_SUBSTEPS = 4
ABORT_SPEED = 100.0
SEED_MASK = (1 << 64) - 1


class SimulationAborted(RuntimeError):
    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class DisturbanceModel:
    """Additive Gaussian measurement noise on every state except the acceleration.

    Draws come from a counter-based generator keyed by ``(seed, step)``, so a
    given step's realization does not depend on who asks for it or in what order.
    """

    sigma_sim: tuple = SIGMA_SIM_NORMAL
    seed: int = 0

    def __post_init__(self):
        if len(self.sigma_sim) != len(NOISY_STATES):
            raise ValueError(f"sigma_sim needs {len(NOISY_STATES)} entries")
        if any(not (s >= 0 and math.isfinite(s)) for s in self.sigma_sim):
            raise ValueError("sigma_sim entries must be finite and non-negative")

    def noise(self, step: int) -> np.ndarray:
        gen = np.random.Generator(np.random.Philox(key=[self.seed & SEED_MASK, step]))
        out = np.zeros(N_X)
        out[list(NOISY_STATES)] = gen.standard_normal(len(NOISY_STATES)) * np.asarray(self.sigma_sim)
        return out


class MovingAverageFilter:
    """Per-state moving average over the last ``window`` samples seen."""

    def __init__(self, windows=FILTER_WINDOWS):
        if len(windows) != N_X or any(int(w) < 1 for w in windows):
            raise ValueError(f"need {N_X} window sizes >= 1")
        self.windows = tuple(int(w) for w in windows)
        self._buffers = [deque(maxlen=w) for w in self.windows]

    def update(self, x) -> np.ndarray:
        out = np.empty(N_X)
        for i, v in enumerate(np.asarray(x, dtype=float)):
            buf = self._buffers[i]
            buf.append(float(v))
            out[i] = v if len(buf) == 1 else math.fsum(buf) / len(buf)
        return out


LOG_COLUMNS = (
    ["step", "t"]
    + [f"true_{n}" for n in STATE_NAMES]
    + [f"meas_{n}" for n in STATE_NAMES]
    + [f"filt_{n}" for n in STATE_NAMES]
    + ["u_j", "u_omega_f", "status", "qp_iterations", "lateral_dev", "gg",
       "ref_s", "ref_x", "ref_y", "ref_psi", "ref_v"]
)


@dataclass
class SimLog:
    """One record per control step. Solve times are kept apart from the CSV so replays compare byte for byte."""

    controller: str
    T_s: float
    steps: list = field(default_factory=list)
    true_x: list = field(default_factory=list)
    measured_x: list = field(default_factory=list)
    filtered_x: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    status: list = field(default_factory=list)
    qp_iterations: list = field(default_factory=list)
    solve_time: list = field(default_factory=list)
    lateral_dev: list = field(default_factory=list)
    gg: list = field(default_factory=list)
    reference: list = field(default_factory=list)
    abort_reason: str | None = None

    def __len__(self):
        return len(self.steps)

    def append(self, step, x_true, x_meas, x_filt, u, status, dev, gg, ref_point):
        self.steps.append(step)
        self.true_x.append(np.array(x_true))
        self.measured_x.append(np.array(x_meas))
        self.filtered_x.append(np.array(x_filt))
        self.controls.append(np.array(u))
        self.status.append(status.outcome)
        self.qp_iterations.append(status.qp_iterations)
        self.solve_time.append(status.solve_time)
        self.lateral_dev.append(float(dev))
        self.gg.append(float(gg))
        self.reference.append(tuple(float(v) for v in ref_point))

    def rows(self):
        for k in range(len(self)):
            yield (
                [self.steps[k], self.steps[k] * self.T_s]
                + list(self.true_x[k]) + list(self.measured_x[k]) + list(self.filtered_x[k])
                + list(self.controls[k])
                + [self.status[k], self.qp_iterations[k], self.lateral_dev[k], self.gg[k]]
                + list(self.reference[k])
            )

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for row in self.rows():
                w.writerow([v if isinstance(v, (str, int)) else repr(float(v)) for v in row])
            if self.abort_reason:
                fh.write(f"# aborted: {self.abort_reason}\n")

    def timing_to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "solve_time_s"])
            for k, t in zip(self.steps, self.solve_time):
                w.writerow([k, repr(float(t))])


def start_state(track: ReferenceTrajectory) -> np.ndarray:
    """On the reference at its first node, at reference speed, zero acceleration."""
    x0 = np.zeros(N_X)
    x0[:4] = track.x_ref[0], track.y_ref[0], track.psi_ref[0], track.v_ref[0]
    return x0


def n_steps_for(duration: float, T_s: float) -> int:
    n = int(round(duration / T_s))
    if n < 1 or abs(n * T_s - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"duration {duration} is not a positive multiple of T_s={T_s}")
    return n


def run_closed_loop(
    controller: str,
    config: OcpConfig,
    params: VehicleParams,
    track: ReferenceTrajectory,
    disturbance: DisturbanceModel,
    duration: float,
    x0=None,
    filter_windows=FILTER_WINDOWS,
) -> SimLog:
    """Simulate ``duration`` seconds of closed-loop driving.

    Raises SimulationAborted (carrying the partial log) if the plant diverges.
    """
    if controller not in CONTROLLERS:
        raise ValueError(f"controller must be one of {CONTROLLERS}, got {controller!r}")
    n_steps = n_steps_for(duration, config.T_s)
    x = start_state(track) if x0 is None else np.asarray(x0, dtype=float).copy()
    colloc = make_collocation(config) if controller == "snmpc" else None
    filt = MovingAverageFilter(filter_windows)
    log = SimLog(controller, config.T_s)
    iterate = None
    failed = False
    u = np.zeros(N_U)

    for k in range(n_steps):
        measured = x + disturbance.noise(k)
        filtered = filt.update(measured)
        try:
            ref = reference_window(track, filtered, config.N_p + 1, config.T_s)
        except ProjectionError as exc:
            log.abort_reason = f"step {k}: {exc}"
            raise SimulationAborted(log.abort_reason, log) from None
        if colloc is None:
            nlp = build_nominal_problem(config, filtered, ref, params)
        else:
            nlp = build_snmpc_problem(config, colloc, filtered, ref, params)
        if iterate is None:
            iterate = initial_iterate(nlp)
        elif failed:
            # the rejected step left gaps that no later step will close; restart
            # the linearization point from the measurement under the shifted plan
            iterate = initial_iterate(nlp, warm_start_shift(iterate).U)
        else:
            iterate = warm_start_shift(iterate)
        new_iterate, status, u0 = rti_step(nlp, iterate, config.max_qp_iter)
        failed = not status.ok
        if failed:
            # the failure is what gets logged; what the car does meanwhile is a
            # step on the tracking problem with the linear rows alone
            new_iterate, rec, u0 = rti_step(nlp, iterate, config.max_qp_iter, linear_rows_only=True)
            failed = not rec.ok
            status = replace(status, solve_time=status.solve_time + rec.solve_time)
        if not failed:
            iterate = new_iterate
            u = np.array(u0, dtype=float)
        else:
            # hold: keep executing the last accepted plan, which the shift has
            # already advanced to the current step
            u = iterate.U[0].copy()
        log.append(k, x, measured, filtered, u, status, lateral_deviation(x, track), gg_constraint(x, params),
                   (ref.s[0], ref.x_ref[0], ref.y_ref[0], ref.psi_ref[0], ref.v_ref[0]))
        try:
            x = rk4_step(x, u, config.T_s, PLANT_SUBSTEPS, params)
        except FloatingPointError as exc:
            log.abort_reason = f"step {k}: {exc}"
            raise SimulationAborted(log.abort_reason, log) from None
        if abs(x[V_LON]) > ABORT_SPEED:
            log.abort_reason = f"step {k}: speed {x[V_LON]:.1f} m/s exceeds {ABORT_SPEED} m/s"
            raise SimulationAborted(log.abort_reason, log)
    return log


def summarize(log: SimLog) -> dict:
    """Deviation percentiles (midpoint convention), g-g violation rate, failures and solve times."""
    if len(log) == 0:
        raise ValueError("cannot summarize an empty log")
    dev = np.abs(np.asarray(log.lateral_dev))
    times = np.asarray(log.solve_time)
    failures = sum(s != "solved" for s in log.status)

    def pct(q):
        return float(np.percentile(dev, q, method="midpoint"))

    return {
        "controller": log.controller,
        "steps": len(log),
        "max_abs_lateral_dev": float(dev.max()),
        "median_abs_lateral_dev": pct(50),
        "p25_abs_lateral_dev": pct(25),
        "p75_abs_lateral_dev": pct(75),
        "gg_violation_fraction": float(np.mean(np.asarray(log.gg) > 1.0)),
        "solver_failures": int(failures),
        "qp_infeasible_steps": int(sum(s == "qp_infeasible" for s in log.status)),
        "feasibility_rate": 1.0 - failures / len(log),
        "mean_solve_time_s": float(times.mean()),
        "max_solve_time_s": float(times.max()),
        "aborted": log.abort_reason is not None,
    }
