"""Real-time-iteration SQP on top of the condensed Gauss-Newton QP."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .qp import INFEASIBLE, MAX_ITERATIONS, solve_qp
from .vehicle import N_U, VehicleControl

SOLVED = "solved"
QP_INFEASIBLE = "qp_infeasible"
NAN_ENCOUNTERED = "nan_encountered"
OUTCOMES = (SOLVED, MAX_ITERATIONS, QP_INFEASIBLE, NAN_ENCOUNTERED)
N_DUAL_COLUMNS = 4
LINEAR_COLUMNS = (0, 1, 3)


@dataclass(frozen=True)
class SolverIterate:
    X: np.ndarray  # (N_p+1, 8)
    U: np.ndarray  # (N_p, 2)
    duals: np.ndarray  # (N_p+1, 4): delta_f bound, omega_f bound, g-g row, implied |a| bound

    @classmethod
    def zeros_like(cls, X, U) -> "SolverIterate":
        X = np.asarray(X, dtype=float)
        return cls(X, np.asarray(U, dtype=float), np.zeros((X.shape[0], N_DUAL_COLUMNS)))


@dataclass(frozen=True)
class SolveStatus:
    outcome: str
    qp_iterations: int
    solve_time: float
    kkt_residual: float
    regularization: float = 0.0

    @property
    def ok(self) -> bool:
        return self.outcome == SOLVED


def initial_iterate(nlp, U=None) -> SolverIterate:
    """Cold start: roll the expectation dynamics out under ``U`` (zeros by default)."""
    U = np.zeros((nlp.config.N_p, N_U)) if U is None else np.asarray(U, dtype=float)
    return SolverIterate.zeros_like(nlp.rollout(U), U)


def rti_step(nlp, iterate: SolverIterate, max_qp_iter: int = 50, linear_rows_only: bool = False):
    """One preparation + feedback cycle: linearize, solve the QP, take the full step.

    Returns ``(new_iterate, status, u0)``. On any failure the input iterate is
    returned unchanged and ``u0`` is None. ``linear_rows_only`` drops the g-g rows
    and keeps only the linear rows (used for recovery after a failed step).
    """
    start = time.perf_counter()
    X, U = iterate.X, iterate.U
    if X.shape != (nlp.config.N_p + 1, nlp.x0.shape[0]) or U.shape != (nlp.config.N_p, N_U):
        raise ValueError(f"iterate shapes {X.shape}, {U.shape} do not match the problem")

    def fail(outcome, iters=0, reg=0.0):
        return iterate, SolveStatus(outcome, iters, time.perf_counter() - start, float("nan"), reg), None

    try:
        with np.errstate(all="ignore"):
            qp = nlp.linearize(X, U, None if linear_rows_only else iterate.duals)
    except FloatingPointError:
        return fail(NAN_ENCOUNTERED)
    parts = (qp.H, qp.grad, qp.C, qp.lb, qp.ub, qp.G, qp.g)
    if not all(np.all(np.isfinite(a)) for a in parts[:3] + parts[5:]) or np.isnan(qp.lb).any() or np.isnan(qp.ub).any():
        return fail(NAN_ENCOUNTERED)

    keep = np.array([col in LINEAR_COLUMNS or not linear_rows_only for _, col in qp.row_slots], dtype=bool)
    slots = [slot for slot, k in zip(qp.row_slots, keep) if k]
    try:
        res = solve_qp(qp.H, qp.grad, C=qp.C[keep], lb=qp.lb[keep], ub=qp.ub[keep], max_iter=max_qp_iter)
    except np.linalg.LinAlgError:
        # Hessian beyond repair: curvature estimates from a diverged iterate
        return fail(NAN_ENCOUNTERED)
    if res.status == INFEASIBLE:
        return fail(QP_INFEASIBLE, res.iterations, res.regularization)
    if res.status == MAX_ITERATIONS:
        return fail(MAX_ITERATIONS, res.iterations, res.regularization)

    z = res.x
    dX = qp.G @ z + qp.g
    X_new = X + dX
    X_new[0] = nlp.x0
    U_new = U + z.reshape(U.shape)
    if not (np.all(np.isfinite(X_new)) and np.all(np.isfinite(U_new))):
        return fail(NAN_ENCOUNTERED, res.iterations, res.regularization)

    duals = np.zeros((X.shape[0], N_DUAL_COLUMNS))
    for (t, col), lam in zip(slots, res.ineq_duals):
        duals[t, col] = lam
    step = max(float(np.abs(z).max(initial=0.0)), float(np.abs(dX).max()))
    kkt = max(step, qp.defect_norm)
    new = SolverIterate(X_new, U_new, duals)
    status = SolveStatus(SOLVED, res.iterations, time.perf_counter() - start, kkt, res.regularization)
    return new, status, VehicleControl(*U_new[0])


def warm_start_shift(iterate: SolverIterate) -> SolverIterate:
    """Shift everything one stage left and duplicate the last stage."""
    def shift(a):
        return np.concatenate([a[1:], a[-1:]], axis=0)

    return replace(iterate, X=shift(iterate.X), U=shift(iterate.U), duals=shift(iterate.duals))


def solve_to_convergence(nlp, iterate: SolverIterate, tol: float = 1e-8, max_sqp_iter: int = 50, max_qp_iter: int = 50):
    """Repeated full-step RTI until the KKT measure drops below ``tol`` (test utility)."""
    status = None
    for _ in range(max_sqp_iter):
        iterate, status, _ = rti_step(nlp, iterate, max_qp_iter)
        if not status.ok or status.kkt_residual < tol:
            break
    return iterate, status
