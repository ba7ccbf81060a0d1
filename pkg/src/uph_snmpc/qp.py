"""Dense convex QP solver (Goldfarb-Idnani dual active set).

Solves

    min  1/2 x'Hx + g'x
    s.t. A_eq x = b_eq
         lb <= C x <= ub

The Hessian is factored once, ``H = L L'``, and the problem is solved in the
variable ``y = L'x`` where it becomes a Euclidean projection. Infeasibility is
detected exactly: a violated constraint that no dual step can reduce is a
certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

SOLVED = "solved"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max_iterations"

REG_START = 1e-8
REG_MAX = 1e-2


@dataclass
class QPResult:
    x: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    status: str
    iterations: int
    kkt_residual: float
    regularization: float = 0.0

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


def _factor(H):
    """Cholesky factor of H, escalating a diagonal shift if H is not numerically PD."""
    n = H.shape[0]
    reg = 0.0
    while True:
        try:
            return scipy.linalg.cholesky(H + reg * np.eye(n), lower=True), reg
        except np.linalg.LinAlgError:
            reg = REG_START if reg == 0.0 else reg * 10.0
            if reg > REG_MAX:
                raise


def kkt_residual(H, g, x, A_eq, b_eq, C, lb, ub, eq_duals, ineq_duals) -> float:
    """Max-norm of stationarity, primal feasibility, dual sign and complementarity."""
    stat = H @ x + g
    res = []
    if A_eq.shape[0]:
        stat = stat + A_eq.T @ eq_duals
        res.append(np.abs(A_eq @ x - b_eq).max())
    if C.shape[0]:
        stat = stat + C.T @ ineq_duals
        cx = C @ x
        res.append(np.maximum(lb - cx, 0.0).max())
        res.append(np.maximum(cx - ub, 0.0).max())
        upper = np.maximum(ineq_duals, 0.0)
        lower = np.maximum(-ineq_duals, 0.0)
        with np.errstate(invalid="ignore"):
            comp_u = np.where(upper > 0, upper * (ub - cx), 0.0)
            comp_l = np.where(lower > 0, lower * (cx - lb), 0.0)
        res.append(np.abs(comp_u).max())
        res.append(np.abs(comp_l).max())
    res.append(np.abs(stat).max() if stat.size else 0.0)
    return float(max(res))


def solve_qp(H, g, A_eq=None, b_eq=None, C=None, lb=None, ub=None, max_iter: int = 50, tol: float = 1e-11) -> QPResult:
    """Solve a strictly convex (after regularization) QP.

    ``lb``/``ub`` may contain infinities for one-sided rows. ``ineq_duals`` is
    positive where the upper bound is active and negative at the lower bound,
    so that ``H x + g + A_eq' eq_duals + C' ineq_duals = 0``. ``max_iter``
    caps the number of active-set changes.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    C = np.zeros((0, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    m = C.shape[0]
    lb = np.full(m, -np.inf) if lb is None else np.asarray(lb, dtype=float).reshape(-1)
    ub = np.full(m, np.inf) if ub is None else np.asarray(ub, dtype=float).reshape(-1)

    L, reg = _factor(0.5 * (H + H.T))
    a = scipy.linalg.solve_triangular(L, g, lower=True)

    # one-sided rows  nrm_i' y >= rhs_i
    n_eq = A_eq.shape[0]
    lower_rows = np.flatnonzero(np.isfinite(lb))
    upper_rows = np.flatnonzero(np.isfinite(ub))
    rows = np.vstack([A_eq, C[lower_rows], -C[upper_rows]])
    rhs = np.concatenate([b_eq, lb[lower_rows], -ub[upper_rows]])
    normals = scipy.linalg.solve_triangular(L, rows.T, lower=True) if rows.shape[0] else np.zeros((n, 0))
    scale = np.maximum(np.linalg.norm(normals, axis=0), 1e-300)
    n_one = rows.shape[0]

    y = -a
    active: list[int] = []
    mult: list[float] = []
    iterations = 0
    status = SOLVED

    def project(p):
        if not active:
            return normals[:, p].copy(), np.zeros(0)
        N = normals[:, active]
        Q, R = np.linalg.qr(N)
        qn = Q.T @ normals[:, p]
        return normals[:, p] - Q @ qn, scipy.linalg.solve_triangular(R, qn)

    def add_constraint(p, equality):
        nonlocal y, iterations, status
        s = normals[:, p] @ y - rhs[p]
        u_p = 0.0
        while True:
            z, r = project(p)
            t1, drop = np.inf, -1
            for k, j in enumerate(active):
                if j >= n_eq and r[k] > 0:
                    ratio = mult[k] / r[k]
                    if ratio < t1:
                        t1, drop = ratio, k
            zn = z @ normals[:, p]
            dependent = np.linalg.norm(z) <= 1e-12 * scale[p]
            t2 = np.inf if dependent else -s / zn
            if not np.isfinite(t1) and not np.isfinite(t2):
                if equality and abs(s) <= tol * max(1.0, abs(rhs[p])):
                    return True
                status = INFEASIBLE
                return False
            t = min(t1, t2)
            if not dependent:
                y = y + t * z
                s = s + t * zn
            for k in range(len(mult)):
                mult[k] -= t * r[k]
            u_p += t
            iterations += 1
            if t2 <= t1:
                active.append(p)
                mult.append(u_p)
                return True
            del active[drop]
            del mult[drop]
            if iterations >= max_iter:
                status = MAX_ITERATIONS
                return False

    eq_sign = np.ones(n_eq)
    for p in range(n_eq):
        s = normals[:, p] @ y - rhs[p]
        if s > 0:
            normals[:, p] *= -1.0
            rhs[p] *= -1.0
            eq_sign[p] = -1.0
        if not add_constraint(p, equality=True):
            break

    while status == SOLVED:
        if n_one == n_eq:
            break
        slack = (normals[:, n_eq:].T @ y - rhs[n_eq:]) / scale[n_eq:]
        slack[[j - n_eq for j in active if j >= n_eq]] = np.inf
        p = int(np.argmin(slack)) + n_eq
        if slack[p - n_eq] >= -tol * max(1.0, abs(rhs[p]) / scale[p]):
            break
        if iterations >= max_iter:
            status = MAX_ITERATIONS
            break
        if not add_constraint(p, equality=False):
            break

    x = scipy.linalg.solve_triangular(L.T, y, lower=False)
    eq_duals = np.zeros(n_eq)
    ineq_duals = np.zeros(m)
    n_low = lower_rows.shape[0]
    for j, u in zip(active, mult):
        if j < n_eq:
            eq_duals[j] = -eq_sign[j] * u
        elif j < n_eq + n_low:
            ineq_duals[lower_rows[j - n_eq]] -= u
        else:
            ineq_duals[upper_rows[j - n_eq - n_low]] += u
    kkt = kkt_residual(H + reg * np.eye(n), g, x, A_eq, b_eq, C, lb, ub, eq_duals, ineq_duals)
    return QPResult(x, eq_duals, ineq_duals, status, iterations, kkt, reg)
