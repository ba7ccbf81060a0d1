from types import SimpleNamespace

import numpy as np
import pytest

from uph_snmpc.ocp import CondensedQp, OcpConfig, build_nominal_problem, build_snmpc_problem, make_collocation
from uph_snmpc.sqp import (
    QP_INFEASIBLE,
    SOLVED,
    SolverIterate,
    initial_iterate,
    rti_step,
    solve_to_convergence,
    warm_start_shift,
)
from uph_snmpc.track import reference_window, synthesize_track
from uph_snmpc.vehicle import VehicleParams, rk4_step


class ToyLsq:
    """min 1/2 (u - 3)^2 over the first control of a one-stage problem with a scalar state."""

    def __init__(self, lb=None, ub=None):
        self.config = SimpleNamespace(N_p=1)
        self.x0 = np.zeros(1)
        self.bounds = (lb, ub)

    def linearize(self, X, U, duals=None):
        u = U.ravel()
        H = np.eye(2)
        grad = u - np.array([3.0, 0.0])
        lb, ub = self.bounds
        C = np.zeros((0, 2)) if lb is None else np.eye(1, 2)
        lbv = np.zeros(0) if lb is None else np.array([lb - u[0]])
        ubv = np.zeros(0) if ub is None else np.array([ub - u[0]])
        slots = [] if lb is None else [(0, 1)]
        return CondensedQp(H, grad, C, lbv, ubv, np.zeros((2, 1, 2)), np.zeros((2, 1)), 0.0, 0.0, np.zeros(len(slots)), slots)


def toy_iterate():
    return SolverIterate.zeros_like(np.zeros((2, 1)), np.zeros((1, 2)))


def test_one_step_solves_linear_least_squares():
    new, status, u0 = rti_step(ToyLsq(), toy_iterate())
    assert status.outcome == SOLVED
    assert u0.j == 3.0 and new.U[0, 0] == 3.0


def test_contradictory_bounds_are_infeasible():
    it = toy_iterate()
    new, status, u0 = rti_step(ToyLsq(lb=1.0, ub=0.0), it)
    assert status.outcome == QP_INFEASIBLE and u0 is None and new is it


def frictionless(params):
    return VehicleParams(**{**params.to_dict(), "rho": 0.0, "fr0": 0.0, "fr1": 0.0, "fr4": 0.0})


@pytest.mark.parametrize("stochastic", [False, True])
def test_straight_line_equilibrium(params, straight, stochastic):
    p = frictionless(params)
    cfg = OcpConfig()
    x0 = np.array([20.0, 0, 0, 10.0, 0, 0, 0, 0])
    ref = reference_window(straight, x0, 39, cfg.T_s)
    if stochastic:
        nlp = build_snmpc_problem(cfg, make_collocation(cfg, (0.0, 0.0, 0.0)), x0, ref, p)
    else:
        nlp = build_nominal_problem(cfg, x0, ref, p)
    it = initial_iterate(nlp)
    for _ in range(3):
        it, status, u0 = rti_step(nlp, it)
        assert status.ok
    assert np.abs(np.asarray(u0)).max() < 1e-6
    assert status.kkt_residual < 1e-8


def test_converges_on_a_corner(params):
    oval = synthesize_track("oval", 100.0, 40.0, 14.0, params)
    cfg = OcpConfig()
    x0 = np.array([oval.x_ref[300], oval.y_ref[300] + 0.2, oval.psi_ref[300], oval.v_ref[300], 0, 0.2, 0.03, 0])
    nlp = build_snmpc_problem(cfg, make_collocation(cfg), x0, reference_window(oval, x0, 39, cfg.T_s), params)
    it, status = solve_to_convergence(nlp, initial_iterate(nlp), tol=1e-8)
    assert status.ok and status.kkt_residual < 1e-8
    ev = nlp.evaluate(it.X, it.U)
    assert np.abs(ev["defects"]).max() < 1e-8
    assert ev["h"][1:].max() <= 1.0 + 1e-8


def test_shift():
    X = np.arange(8 * 4, dtype=float).reshape(4, 8)
    U = np.arange(3, dtype=float)[:, None] * np.ones((3, 2))
    s = warm_start_shift(SolverIterate.zeros_like(X, U))
    np.testing.assert_array_equal(s.U[:, 0], [1, 2, 2])
    np.testing.assert_array_equal(s.X[:-1], X[1:])
    np.testing.assert_array_equal(s.X[-1], X[-1])
    const = SolverIterate.zeros_like(np.ones((4, 8)), np.ones((3, 2)))
    np.testing.assert_array_equal(warm_start_shift(const).X, const.X)


def test_warm_start_beats_cold_start(params, straight):
    cfg = OcpConfig()
    x0 = np.array([20.0, 0.5, 0.02, 10.0, 0, 0, 0, 0])
    nlp = build_nominal_problem(cfg, x0, reference_window(straight, x0, 39, cfg.T_s), params)
    it = initial_iterate(nlp)
    for _ in range(4):
        it, _, _ = rti_step(nlp, it)
    x1 = rk4_step(x0, it.U[0], cfg.T_s, 4, params)
    nxt = build_nominal_problem(cfg, x1, reference_window(straight, x1, 39, cfg.T_s), params)
    # residual reached after one step = size of the step that would follow it
    after_warm, _, _ = rti_step(nxt, warm_start_shift(it))
    after_cold, _, _ = rti_step(nxt, initial_iterate(nxt))
    _, warm, _ = rti_step(nxt, after_warm)
    _, cold, _ = rti_step(nxt, after_cold)
    assert warm.ok and cold.ok and warm.kkt_residual < cold.kkt_residual


def test_linear_rows_only_drops_gg_rows(params, straight):
    cfg = OcpConfig()
    x0 = np.array([20.0, 0.0, 0.0, 10.0, 0, 0, 0, 0])
    nlp = build_nominal_problem(cfg, x0, reference_window(straight, x0, 39, cfg.T_s), params)
    new, status, _ = rti_step(nlp, initial_iterate(nlp), linear_rows_only=True)
    assert status.ok and np.all(new.duals[:, 2] == 0)


def test_shape_mismatch_rejected(params, straight):
    cfg = OcpConfig()
    x0 = np.array([20.0, 0, 0, 10.0, 0, 0, 0, 0])
    nlp = build_nominal_problem(cfg, x0, reference_window(straight, x0, 39, cfg.T_s), params)
    with pytest.raises(ValueError):
        rti_step(nlp, SolverIterate.zeros_like(np.zeros((5, 8)), np.zeros((4, 2))))
