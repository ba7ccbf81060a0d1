"""Multiple-shooting transcription of the nominal and stochastic tracking OCPs.

Decision variables are the expectation trajectory ``X`` ((N_p+1) x 8) and the
controls ``U`` (N_p x 2). In the stochastic problem the first ``N_u`` stages
carry a PCE sample ensemble. Samples are not decision variables: stage ``t``
uses the points ``X[t] + D[t]``, where the deviations ``D`` come from the
forward propagation (``D[0]`` are the collocation disturbances and
``D[t+1] = F(X[t] + D[t]) - E[F(X[t] + D[t])]``). On a dynamically consistent
trajectory this is exactly the sample evolution of the PCE scheme, and with
zero spread every stage collapses to the nominal dynamics bit for bit.

Linearization condenses everything to the control space, giving a dense QP in
``2 N_p`` variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pce import CollocationSet, build_collocation, generate_multi_indices, regression_coefficients
from .track import ReferenceWindow
from .vehicle import (
    AX_ACCEL,
    AX_DECEL,
    ACC,
    DELTA_F,
    N_U,
    N_X,
    OMEGA_F,
    PSI_DOT,
    V_LAT,
    V_LON,
    IntegrationError,
    VehicleParams,
    dynamics_rhs,
    gg_constraint_smooth,
    gg_longitudinal_weight,
    rk4,
)

SQRT_SMOOTH = 1e-6
COST_STATES = (0, 1, 2, 3)  # x_pos, y_pos, psi, v_lon
DISTURBED_STATES = (V_LON, V_LAT, PSI_DOT)
ROW_COLUMNS = {"linear_state": 0, "linear_control": 1, "nonlinear_hard": 2, "chance": 2, "implied_accel": 3}
# |a| <= 4.5 m/s^2 follows from g-g <= 1 for every speed and sign of a
IMPLIED_ACCEL_MAX = max(AX_ACCEL + AX_DECEL)


@dataclass(frozen=True)
class OcpConfig:
    T_s: float = 0.08
    T_p: float = 3.04
    T_u: float = 0.4
    p: float = 0.8
    Q: tuple = (2.8, 2.8, 0.4, 0.2)
    R: tuple = (38.1, 101.4)
    Q_e: tuple | None = None
    delta_max: float = 0.61
    omega_max: float = 0.322
    h_lower: float = 0.0
    h_upper: float = 1.0
    n_s: int = 10
    d_max: int = 2
    sigma_w_snmpc: tuple = (0.8, 0.35, 0.035)
    disturbed_states: tuple = DISTURBED_STATES
    substeps: int = 1
    max_qp_iter: int = 50
    fd_step: float = 1e-6
    constrain_initial_stage: bool = False
    implied_accel_bound: bool = True

    def __post_init__(self):
        if not self.T_s > 0 or not self.T_p > 0 or not self.T_u > 0:
            raise ValueError("T_s, T_p and T_u must be positive")
        if not 0 < self.p <= 1:
            raise ValueError("violation probability p must lie in (0, 1]")
        if not 1 <= self.N_u <= self.N_p:
            raise ValueError(f"need 1 <= N_u <= N_p, got N_u={self.N_u}, N_p={self.N_p}")
        if len(self.Q) != 4 or len(self.R) != 2 or (self.Q_e is not None and len(self.Q_e) != 4):
            raise ValueError("Q and Q_e need 4 entries, R needs 2")
        if len(self.sigma_w_snmpc) != len(self.disturbed_states):
            raise ValueError("sigma_w_snmpc must have one entry per disturbed state")
        if any(s < 0 for s in self.sigma_w_snmpc):
            raise ValueError("sigma_w_snmpc must be non-negative")
        if self.substeps < 1 or self.max_qp_iter < 1:
            raise ValueError("substeps and max_qp_iter must be >= 1")

    @property
    def N_p(self) -> int:
        return int(round(self.T_p / self.T_s))

    @property
    def N_u(self) -> int:
        return int(round(self.T_u / self.T_s))

    @property
    def kappa(self) -> float:
        return math.sqrt((1.0 - self.p) / self.p)

    @property
    def terminal_weights(self) -> tuple:
        return self.Q if self.Q_e is None else self.Q_e

    def stage_weights(self) -> np.ndarray:
        return np.array(tuple(self.Q) + tuple(self.R), dtype=float)


@dataclass(frozen=True)
class AugmentedStageState:
    expectation_x: np.ndarray
    samples_X: np.ndarray


@dataclass(frozen=True)
class ConstraintRow:
    stage: int
    kind: str  # "linear_state", "linear_control", "nonlinear_hard", "chance", "implied_accel"
    lower: float
    upper: float
    uses_samples: bool = False


@dataclass
class CondensedQp:
    """Gauss-Newton QP in the control increments plus the state sensitivities."""

    H: np.ndarray
    grad: np.ndarray
    C: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    G: np.ndarray  # (N_p+1, 8, 2 N_p) state sensitivities
    g: np.ndarray  # (N_p+1, 8) state offsets (defects propagated)
    defect_norm: float
    cost: float
    constraint_values: np.ndarray
    row_slots: list  # (stage, column) per inequality row; columns: delta_f, omega_f, g-g, implied |a|


def _fd_steps(v, rel):
    return rel * (1.0 + np.abs(v))


class _Dynamics:
    """Discrete dynamics and finite-difference Jacobians of one shooting interval."""

    def __init__(self, params: VehicleParams, T_s: float, substeps: int, fd_step: float):
        self.params = params
        self.T_s = T_s
        self.substeps = substeps
        self.fd_step = fd_step
        self._rhs = lambda x, u: dynamics_rhs(x, u, params)

    def step(self, x, u):
        return rk4(self._rhs, x, u, self.T_s, self.substeps)

    def linearize(self, x, u):
        """Values and forward-difference Jacobians at K points: F (K,8), A (K,8,8), B (K,8,2)."""
        K = x.shape[0]
        F = self.step(x, u)
        # the model is invariant under translation, so differentiate at the origin:
        # large positions would otherwise swamp the differences in rounding error
        x = x.copy()
        x[:, :2] = 0.0
        hx = _fd_steps(x, self.fd_step)
        hu = _fd_steps(u, self.fd_step)
        xs = np.broadcast_to(x, (1 + N_X + N_U, K, N_X)).copy()
        us = np.broadcast_to(u, (1 + N_X + N_U, K, N_U)).copy()
        for i in range(N_X):
            xs[1 + i, :, i] += hx[:, i]
        for i in range(N_U):
            us[1 + N_X + i, :, i] += hu[:, i]
        out = self.step(xs.reshape(-1, N_X), us.reshape(-1, N_U)).reshape(1 + N_X + N_U, K, N_X)
        F0 = out[0]
        # exact perturbation sizes, as represented in floating point
        dx = (xs[1 : 1 + N_X, :, :] - x)[np.arange(N_X), :, np.arange(N_X)]  # (8, K)
        du = (us[1 + N_X :, :, :] - u)[np.arange(N_U), :, np.arange(N_U)]  # (2, K)
        A = ((out[1 : 1 + N_X] - F0) / dx[:, :, None]).transpose(1, 2, 0)
        B = ((out[1 + N_X :] - F0) / du[:, :, None]).transpose(1, 2, 0)
        return F, A, B


def _gg_with_gradient(points, params, rel):
    """Smooth g-g value and forward-difference gradient at K points."""
    K = points.shape[0]
    h = _fd_steps(points, rel)
    xs = np.broadcast_to(points, (1 + N_X, K, N_X)).copy()
    for i in range(N_X):
        xs[1 + i, :, i] += h[:, i]
    vals = gg_constraint_smooth(xs, params)
    dx = (xs[1:] - points)[np.arange(N_X), :, np.arange(N_X)]
    grad = ((vals[1:] - vals[0]) / dx).T
    return vals[0], grad


def sample_weights(regression_A: np.ndarray) -> np.ndarray:
    """Weights of the constant-term regression, i.e. the PCE expectation."""
    return regression_A[0]


def _weighted_mean_rows(weights, rows):
    """sum_i w_i rows_i for weights summing to one, anchored at row 0."""
    base = rows[0]
    return base + np.tensordot(weights, rows - base, axes=1)


def surrogate_from_values(values, regression_A, kappa):
    """Chance-constraint surrogate E[h] + kappa sqrt(Var[h]) and its gradient w.r.t. the sample values.

    The square root is smoothed as ``sqrt(Var + eps^2) - eps`` so the
    surrogate equals E[h] exactly at zero variance and stays differentiable.
    """
    coeffs = regression_coefficients(regression_A, values[:, None])[:, 0]
    var = float(np.sum(coeffs[1:] ** 2))
    root = math.sqrt(var + SQRT_SMOOTH**2)
    value = coeffs[0] + kappa * (root - SQRT_SMOOTH)
    weights = regression_A[0] + (kappa / root) * (coeffs[1:] @ regression_A[1:])
    return value, coeffs[0], var, weights


def initial_samples(x0, colloc: CollocationSet, disturbed_states=DISTURBED_STATES) -> np.ndarray:
    """Sample ensemble around x0: disturbed states get the collocation offsets."""
    X = np.repeat(np.asarray(x0, dtype=float)[None, :], colloc.n_samples, axis=0)
    X[:, list(disturbed_states)] += colloc.samples_W
    return X


def make_collocation(config: OcpConfig, sigma=None) -> CollocationSet:
    sigma = config.sigma_w_snmpc if sigma is None else sigma
    indices = generate_multi_indices(len(config.disturbed_states), config.d_max)
    return build_collocation(np.asarray(sigma, dtype=float), config.n_s, indices)


def propagate_samples_stage(samples_X, u, t: int, config: OcpConfig, params: VehicleParams) -> np.ndarray:
    """Advance the sample ensemble one stage; zero block at and beyond the UPH."""
    samples_X = np.asarray(samples_X, dtype=float)
    if t >= config.N_p:
        raise ValueError(f"stage {t} outside the prediction horizon")
    if t >= config.N_u:
        return np.zeros_like(samples_X)
    u_rows = np.broadcast_to(np.asarray(u, dtype=float), (samples_X.shape[0], N_U))
    out = rk4(lambda x, uu: dynamics_rhs(x, uu, params), samples_X, u_rows, config.T_s, config.substeps)
    bad = np.flatnonzero(~np.isfinite(out).all(axis=1))
    if bad.size:
        raise IntegrationError(f"sample propagation diverged in rows {bad.tolist()} at stage {t}")
    return out


def expectation_stage(prev: AugmentedStageState, u, t: int, colloc: CollocationSet, config: OcpConfig, params: VehicleParams) -> np.ndarray:
    """Expectation at stage t+1: PCE mean of propagated samples before the UPH, nominal after."""
    if t < config.N_u:
        propagated = propagate_samples_stage(prev.samples_X, u, t, config, params)
        return regression_coefficients(colloc.regression_A, propagated)[0]
    x = np.asarray(prev.expectation_x, dtype=float)
    return rk4(lambda xx, uu: dynamics_rhs(xx, uu, params), x, np.asarray(u, dtype=float), config.T_s, config.substeps)


def chance_constraint_surrogate(samples_X, u, expectation_x, t: int, colloc: CollocationSet, config: OcpConfig, params: VehicleParams) -> float:
    """Deterministic surrogate of the g-g chance constraint at stage t."""
    if t < config.N_u:
        h = gg_constraint_smooth(np.asarray(samples_X, dtype=float), params)
        if not np.all(np.isfinite(h)):
            raise FloatingPointError(f"non-finite g-g value in samples {np.flatnonzero(~np.isfinite(h)).tolist()}")
        return float(surrogate_from_values(h, colloc.regression_A, config.kappa)[0])
    return float(gg_constraint_smooth(np.asarray(expectation_x, dtype=float), params))


@dataclass
class TranscribedNlp:
    """One OCP instance (nominal or stochastic) at a fixed initial state and reference."""

    config: OcpConfig
    params: VehicleParams
    x0: np.ndarray
    ref: ReferenceWindow
    colloc: CollocationSet | None = None
    n_sample_stages: int = 0
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self._dyn = _Dynamics(self.params, self.config.T_s, self.config.substeps, self.config.fd_step)
        N = self.config.N_p
        self._yref = np.column_stack([self.ref.x_ref, self.ref.y_ref, self.ref.psi_ref, self.ref.v_ref])
        self._w_stage = self.config.stage_weights()
        self._w_term = np.asarray(self.config.terminal_weights, dtype=float)
        if self.colloc is not None:
            self._D0 = np.zeros((self.colloc.n_samples, N_X))
            self._D0[:, list(self.config.disturbed_states)] = self.colloc.samples_W
            self._weights = sample_weights(self.colloc.regression_A)
        first = 0 if self.config.constrain_initial_stage else 1
        self._constrained_stages = list(range(first, N + 1))
        rows = []
        for t in range(N + 1):
            if t >= 1:
                rows.append(ConstraintRow(t, "linear_state", -self.config.delta_max, self.config.delta_max))
            if t < N:
                rows.append(ConstraintRow(t, "linear_control", -self.config.omega_max, self.config.omega_max))
            kind = "chance" if self.colloc is not None else "nonlinear_hard"
            rows.append(ConstraintRow(t, kind, self.config.h_lower, self.config.h_upper, self.stage_uses_samples(t)))
            if t >= 1 and self.config.implied_accel_bound:
                # redundant for the NLP, but keeps the linearized g-g row from trading any
                # lateral excess against an arbitrarily large acceleration change
                rows.append(ConstraintRow(t, "implied_accel", -IMPLIED_ACCEL_MAX, IMPLIED_ACCEL_MAX))
        self.rows = rows

    @property
    def stochastic(self) -> bool:
        return self.colloc is not None

    @property
    def n_stages(self) -> int:
        return self.config.N_p + 1

    def stage_uses_samples(self, t: int) -> bool:
        """Whether the constraint at stage t carries a PCE variance term."""
        if self.colloc is None:
            return False
        return t < self.n_sample_stages or (t == self.config.N_p and self.n_sample_stages == self.config.N_p)

    def stage_rows(self, t: int) -> list:
        return [r for r in self.rows if r.stage == t]

    # ------------------------------------------------------------------ evaluation

    def _forward(self, X, U, with_jacobians: bool):
        """Stage-wise propagation at the iterate.

        Returns per-stage dictionaries holding the stage points (samples or the
        node), their successors and, optionally, Jacobians.
        """
        N = self.config.N_p
        Nu = self.n_sample_stages if self.stochastic else 0
        stages = []
        D = self._D0 if Nu > 0 else None
        for t in range(Nu):
            pts = X[t] + D
            u_rows = np.broadcast_to(U[t], (pts.shape[0], N_U))
            if with_jacobians:
                F, A, B = self._dyn.linearize(pts, u_rows)
            else:
                F, A, B = self._dyn.step(pts, u_rows), None, None
            E = _weighted_mean_rows(self._weights, F)
            stages.append({"points": pts, "F": F, "A": A, "B": B, "next": E})
            D = F - E
        # terminal sample points exist only when propagation spans the whole horizon
        terminal_points = X[N] + D if (Nu == N and D is not None) else None
        if Nu < N:
            pts = X[Nu:N]
            if with_jacobians:
                F, A, B = self._dyn.linearize(pts, U[Nu:N])
            else:
                F, A, B = self._dyn.step(pts, U[Nu:N]), None, None
            for k, t in enumerate(range(Nu, N)):
                stages.append({
                    "points": pts[k : k + 1], "F": F[k : k + 1],
                    "A": None if A is None else A[k : k + 1], "B": None if B is None else B[k : k + 1],
                    "next": F[k],
                })
        return stages, terminal_points

    def constraint_points(self, X, U):
        """Points at which the g-g map is evaluated for each stage (samples or the node)."""
        stages, terminal = self._forward(X, U, with_jacobians=False)
        pts = [stages[t]["points"] if self.stage_uses_samples(t) else X[t : t + 1] for t in range(self.config.N_p)]
        pts.append(terminal if terminal is not None else X[self.config.N_p : self.config.N_p + 1])
        return pts

    def _stage_h(self, t, points):
        h = gg_constraint_smooth(points, self.params)
        if self.stage_uses_samples(t):
            return surrogate_from_values(h, self.colloc.regression_A, self.config.kappa)[0]
        return float(h[0])

    def residuals(self, X, U):
        """Weighted least-squares residuals (stage and terminal), before weighting."""
        N = self.config.N_p
        r_stage = np.concatenate([X[:N, list(COST_STATES)] - self._yref[:N], U], axis=1)
        r_term = X[N, list(COST_STATES)] - self._yref[N]
        return r_stage, r_term

    def cost(self, X, U) -> float:
        r_stage, r_term = self.residuals(X, U)
        return 0.5 * float(np.sum(r_stage**2 * self._w_stage) + np.sum(r_term**2 * self._w_term))

    def evaluate(self, X, U) -> dict:
        """Defects, cost and constraint values at a candidate trajectory."""
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        stages, terminal = self._forward(X, U, with_jacobians=False)
        N = self.config.N_p
        defects = np.array([stages[t]["next"] - X[t + 1] for t in range(N)])
        h = np.empty(N + 1)
        pts = self.constraint_points(X, U)
        for t in range(N + 1):
            h[t] = self._stage_h(t, pts[t])
        r_stage, r_term = self.residuals(X, U)
        return {
            "initial": self.x0 - X[0],
            "defects": defects,
            "h": h,
            "delta": X[:, DELTA_F].copy(),
            "omega": U[:, OMEGA_F].copy(),
            "cost": self.cost(X, U),
            "r_stage": r_stage,
            "r_term": r_term,
        }

    def rollout(self, U) -> np.ndarray:
        """Dynamically consistent expectation trajectory for controls U."""
        U = np.asarray(U, dtype=float)
        N = self.config.N_p
        X = np.empty((N + 1, N_X))
        X[0] = self.x0
        Nu = self.n_sample_stages if self.stochastic else 0
        D = self._D0 if Nu > 0 else None
        for t in range(N):
            if t < Nu:
                F = self._dyn.step(X[t] + D, np.broadcast_to(U[t], (D.shape[0], N_U)))
                X[t + 1] = _weighted_mean_rows(self._weights, F)
                D = F - X[t + 1]
            else:
                X[t + 1] = self._dyn.step(X[t : t + 1], U[t : t + 1])[0]
        return X

    # --------------------------------------------------------------- linearization

    def linearize(self, X, U, duals=None) -> CondensedQp:
        """Condensed Gauss-Newton QP around the iterate (X, U).

        State perturbations are affine in the control increments,
        ``dX[t] = G[t] z + g[t]``; sample points follow their own affine maps
        ``M[t] z + m[t]`` (one per sample) while the ensemble is propagated.

        ``duals`` ((N_p+1) x 4, optional) are multiplier estimates of the
        previous iterate; positive g-g multipliers add the curvature of the
        g-g map (a sum of squares) to the Hessian in Gauss-Newton form.
        """
        cfg = self.config
        N = cfg.N_p
        nz = N_U * N
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        stages, terminal = self._forward(X, U, with_jacobians=True)
        n_sampled = self.n_sample_stages if self.stochastic else 0

        G = np.zeros((N + 1, N_X, nz))
        g = np.zeros((N + 1, N_X))
        g[0] = self.x0 - X[0]
        point_sens = {}
        M_pts = np.broadcast_to(G[0], (stages[0]["points"].shape[0], N_X, nz)).copy()
        m_pts = np.broadcast_to(g[0], (stages[0]["points"].shape[0], N_X)).copy()
        max_defect = float(np.abs(g[0]).max())
        for t in range(N):
            st = stages[t]
            sampled = t < n_sampled
            if not sampled:
                M_pts, m_pts = G[t][None], g[t][None]
            point_sens[t] = (M_pts, m_pts)
            A = st["A"]
            lin = A @ M_pts
            lin[:, :, N_U * t : N_U * t + N_U] += st["B"]
            const = np.einsum("kij,kj->ki", A, m_pts)
            defect = st["next"] - X[t + 1]
            max_defect = max(max_defect, float(np.abs(defect).max()))
            G[t + 1] = _weighted_mean_rows(self._weights, lin) if sampled else lin[0]
            g[t + 1] = (_weighted_mean_rows(self._weights, const) if sampled else const[0]) + defect
            if sampled:
                # propagated samples are the next stage's points (up to the defect shift)
                M_pts, m_pts = lin, const + defect
        point_sens[N] = (M_pts, m_pts) if terminal is not None else (G[N][None], g[N][None])

        # cost
        sel = list(COST_STATES)
        r_stage, r_term = self.residuals(X, U)
        Gx = G[:, sel, :]
        rx = np.vstack([r_stage[:, :4], r_term[None]]) + g[:, sel]
        wx = np.vstack([np.broadcast_to(self._w_stage[:4], (N, 4)), self._w_term[None]])
        WG = (Gx * wx[:, :, None]).reshape(-1, nz)
        H = Gx.reshape(-1, nz).T @ WG
        grad = WG.T @ rx.reshape(-1)
        wu = np.tile(self._w_stage[4:], N)
        H[np.diag_indices(nz)] += wu
        grad += wu * U.reshape(-1)

        # constraints
        C_rows, lbs, ubs, vals, slots = [], [], [], [], []
        for row in self.rows:
            t = row.stage
            if row.kind == "linear_state":
                c = G[t, DELTA_F]
                v = X[t, DELTA_F] + g[t, DELTA_F]
            elif row.kind == "implied_accel":
                c = G[t, ACC]
                v = X[t, ACC] + g[t, ACC]
            elif row.kind == "linear_control":
                c = np.zeros(nz)
                c[N_U * t + OMEGA_F] = 1.0
                v = U[t, OMEGA_F]
            else:
                if t not in self._constrained_stages:
                    continue
                lam = 0.0 if duals is None else max(float(duals[t, 2]), 0.0)
                c, v = self._linearize_h(t, X, stages, terminal, point_sens[t], H if lam > 0 else None, lam)
            C_rows.append(c)
            slots.append((t, ROW_COLUMNS[row.kind]))
            lower = row.lower
            if ROW_COLUMNS[row.kind] == 2 and lower <= 0.0:
                # h is a sum of squares, so h >= 0 holds identically; its tangent plane
                # would only forbid steps that lower h
                lower = -np.inf
            lbs.append(lower - v)
            ubs.append(row.upper - v)
            vals.append(v)
        return CondensedQp(
            H, grad, np.array(C_rows), np.array(lbs), np.array(ubs), G, g,
            max_defect, self.cost(X, U), np.array(vals), slots,
        )

    def _linearize_h(self, t, X, stages, terminal, sens, H=None, lam=0.0):
        """Linearized g-g constraint (surrogate on sample stages) at stage t.

        If ``H`` is given, ``lam`` times the Gauss-Newton curvature of the g-g
        residuals ``(a / a_x,max, v_lon psi_dot / a_y,max)`` is added to it in place.
        """
        M_pts, m_pts = sens
        if self.stage_uses_samples(t):
            points = terminal if t == self.config.N_p else stages[t]["points"]
        else:
            points = X[t : t + 1]
        hv, hgrad = _gg_with_gradient(points, self.params, self.config.fd_step)
        per_lin = np.einsum("ki,kij->kj", hgrad, M_pts)
        per_const = np.einsum("ki,ki->k", hgrad, m_pts)
        if self.stage_uses_samples(t):
            value, _, _, w = surrogate_from_values(hv, self.colloc.regression_A, self.config.kappa)
        else:
            value, w = hv[0], np.ones(1)
        if H is not None:
            lon = np.sqrt(gg_longitudinal_weight(points))
            J_lon = lon[:, None] * M_pts[:, ACC, :]
            J_lat = (points[:, PSI_DOT, None] * M_pts[:, V_LON, :] + points[:, V_LON, None] * M_pts[:, PSI_DOT, :]) / self.params.a_y_max
            wpos = 2.0 * lam * np.maximum(w, 0.0)
            H += np.einsum("k,ki,kj->ij", wpos, J_lon, J_lon) + np.einsum("k,ki,kj->ij", wpos, J_lat, J_lat)
        # weights sum to one (constant basis term); anchor at sample 0
        return (per_lin[0] + w @ (per_lin - per_lin[0]), value + per_const[0] + w @ (per_const - per_const[0]))


def _check_inputs(config, x0, ref):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (N_X,) or not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be a finite 8-vector")
    if len(ref) < config.N_p + 1:
        raise ValueError(f"reference window has {len(ref)} nodes, need {config.N_p + 1}")
    return x0


def _trim(ref: ReferenceWindow, n: int) -> ReferenceWindow:
    return ReferenceWindow(ref.s[:n], ref.x_ref[:n], ref.y_ref[:n], ref.psi_ref[:n], ref.v_ref[:n])


def build_snmpc_problem(config: OcpConfig, colloc: CollocationSet, x0, ref_window: ReferenceWindow, params: VehicleParams) -> TranscribedNlp:
    x0 = _check_inputs(config, x0, ref_window)
    return TranscribedNlp(config, params, x0, _trim(ref_window, config.N_p + 1), colloc, config.N_u)


def build_nominal_problem(config: OcpConfig, x0, ref_window: ReferenceWindow, params: VehicleParams) -> TranscribedNlp:
    x0 = _check_inputs(config, x0, ref_window)
    return TranscribedNlp(config, params, x0, _trim(ref_window, config.N_p + 1))
