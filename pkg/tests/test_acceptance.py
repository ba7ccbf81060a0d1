"""Acceptance criteria 1-10. Each test records one pass/fail line (see the terminal summary)."""

import json
import math
import time

import numpy as np
import pytest
from scipy.special import ndtri

from uph_snmpc import cli
from uph_snmpc.ocp import OcpConfig, build_nominal_problem, build_snmpc_problem, make_collocation
from uph_snmpc.pce import build_collocation, generate_multi_indices, n_terms, regress_moments
from uph_snmpc.qp import SOLVED, solve_qp
from uph_snmpc.sim import SIGMA_SIM_NORMAL, DisturbanceModel, SimulationAborted, run_closed_loop, summarize
from uph_snmpc.track import reference_window, synthesize_track
from uph_snmpc.vehicle import rk4_step

# low-speed oval used for the closed-loop criteria (see the README for why)
TRACK = ("oval", 150.0, 40.0, 12.0)
SEEDS = (0, 1, 2, 3, 4)
SIGMA_SIM_EXACT = (0.3, 0.3, 0.05, 0.8, 0.8, 0.1, 0.01)
SIGMA_SNMPC_INFLATED = (0.8, 0.8, 0.1)


@pytest.fixture(scope="module")
def track(params):
    return synthesize_track(*TRACK, params)


def closed_loop(controller, config, params, track, sigma, seed, duration):
    try:
        return run_closed_loop(controller, config, params, track, DisturbanceModel(sigma, seed), duration)
    except SimulationAborted as exc:
        return exc.log


@pytest.fixture(scope="module")
def disturbed_runs(params, track):
    """Criterion 6 runs: both controllers, normal disturbance, 120 s, five shared seeds."""
    start = time.perf_counter()
    runs = {(c, s): closed_loop(c, OcpConfig(), params, track, SIGMA_SIM_NORMAL, s, 120.0)
            for s in SEEDS for c in ("nominal", "snmpc")}
    return runs, time.perf_counter() - start


def test_criterion_01_pce_exactness(criterion):
    start = time.perf_counter()
    idx = generate_multi_indices(3, 2)
    sigma = np.array([0.8, 0.35, 0.035])
    colloc = build_collocation(sigma, 10, idx)
    W = colloc.samples_W
    mean, var, _ = regress_moments(colloc, W[:, 0] ** 2)
    errs = [abs(mean - 0.64) / 0.64, abs(var - 0.8192) / 0.8192]
    # a full quadratic in all three inputs against its analytic Gaussian moments
    C = np.array([[1.0, 0.5, -0.2], [0.5, -2.0, 0.3], [-0.2, 0.3, 4.0]])
    b = np.array([0.7, -1.1, 2.0])
    S = np.diag(sigma**2)
    mean, var, _ = regress_moments(colloc, 1.5 + W @ b + np.einsum("ni,ij,nj->n", W, C, W))
    e_mean = 1.5 + np.trace(C @ S)
    e_var = b @ S @ b + 2 * np.trace(C @ S @ C @ S)
    errs += [abs(mean - e_mean) / abs(e_mean), abs(var - e_var) / e_var]
    elapsed = time.perf_counter() - start
    ok = max(errs) < 1e-8 and elapsed < 1.0
    criterion(1, ok, f"max relative moment error {max(errs):.2e} (< 1e-8), {elapsed:.3f} s (< 1 s)")
    assert ok


def test_criterion_02_pce_vs_monte_carlo(criterion):
    start = time.perf_counter()
    sigma = 0.5

    def g(x):
        return np.sin(x) + x**2

    colloc = build_collocation([sigma], 10, generate_multi_indices(1, 2))
    pce_mean, _, _ = regress_moments(colloc, g(colloc.samples_W[:, 0]))
    # Monte-Carlo reference from quasi-independent draws (inverse-CDF of a fixed uniform stream)
    u = np.random.default_rng(20240101).random(1_000_000)
    draws = g(sigma * ndtri(u))
    mc_mean, se = draws.mean(), draws.std(ddof=1) / math.sqrt(draws.size)
    elapsed = time.perf_counter() - start
    z = abs(pce_mean - mc_mean) / se
    ok = z < 3 and elapsed < 10
    criterion(2, ok, f"PCE {pce_mean:.6f} vs MC {mc_mean:.6f} +- {se:.1e}: {z:.2f} SE (< 3), {elapsed:.2f} s (< 10 s)")
    assert ok


def test_criterion_03_basis_count(criterion):
    L = n_terms(3, 2)
    ok = L == 10 and len(generate_multi_indices(3, 2)) == 10
    criterion(3, ok, f"(n_w=3, d_max=2) -> L = {L}")
    assert ok


def test_criterion_04_nominal_recovery(criterion, params, track):
    start = time.perf_counter()
    quiet = (0.0,) * 7
    nominal = closed_loop("nominal", OcpConfig(), params, track, quiet, 0, 10.0)
    snmpc = closed_loop("snmpc", OcpConfig(sigma_w_snmpc=(0.0, 0.0, 0.0)), params, track, quiet, 0, 10.0)
    elapsed = time.perf_counter() - start
    a, b = np.array(nominal.true_x), np.array(snmpc.true_x)
    same_len = len(nominal) == len(snmpc) == 125
    diff = float(np.abs(a - b).max()) if same_len else math.inf
    ok = same_len and diff < 1e-9 and elapsed < 30
    criterion(4, ok, f"max |x_snmpc - x_nominal| over 125 steps = {diff:.1e} (< 1e-9), {elapsed:.1f} s (< 30 s)")
    assert ok


@pytest.mark.parametrize("case", ["exact", "wrong"])
def test_criterion_05_uph_feasibility(criterion, params, track, case):
    sigma_sim = SIGMA_SIM_EXACT if case == "exact" else SIGMA_SIM_NORMAL
    counts, times = {}, {}
    for T_u in (3.04, 0.8):
        cfg = OcpConfig(T_u=T_u, sigma_w_snmpc=SIGMA_SNMPC_INFLATED)
        start = time.perf_counter()
        log = closed_loop("snmpc", cfg, params, track, sigma_sim, 0, 60.0)
        times[T_u] = time.perf_counter() - start
        counts[T_u] = summarize(log)["qp_infeasible_steps"]
    ok = counts[3.04] >= 1 and counts[0.8] == 0 and max(times.values()) < 600
    label = f"[{case} assumption] infeasible steps: T_u=T_p -> {counts[3.04]} (>= 1), T_u=0.8 s -> {counts[0.8]} (== 0)"
    criterion(5, ok, f"{label}, slowest run {max(times.values()):.0f} s", part=case)
    assert ok


def test_criterion_06_disturbance_robustness(criterion, disturbed_runs):
    runs, elapsed = disturbed_runs
    ratios = []
    for s in SEEDS:
        nom = summarize(runs["nominal", s])["max_abs_lateral_dev"]
        sto = summarize(runs["snmpc", s])["max_abs_lateral_dev"]
        ratios.append(sto / nom)
    complete = all(len(r) == 1500 for r in runs.values())
    wins = sum(r <= 0.8 for r in ratios)
    ok = complete and wins >= 4 and elapsed < 1200
    criterion(6, ok, f"SNMPC/NMPC max|dev| ratios {[round(r, 3) for r in ratios]}: {wins}/5 <= 0.8 (need 4), "
                     f"all runs complete: {complete}, {elapsed:.0f} s")
    assert ok


def test_criterion_07_constraint_violations(criterion, disturbed_runs):
    runs, _ = disturbed_runs
    frac = {c: np.mean([summarize(runs[c, s])["gg_violation_fraction"] for s in SEEDS]) for c in ("nominal", "snmpc")}
    per_seed = [(summarize(runs["nominal", s])["gg_violation_fraction"], summarize(runs["snmpc", s])["gg_violation_fraction"]) for s in SEEDS]
    ok = frac["snmpc"] < frac["nominal"]
    criterion(7, ok, f"mean fraction of steps with gg > 1: SNMPC {frac['snmpc']:.4f} vs NMPC {frac['nominal']:.4f}; "
                     f"per seed (NMPC, SNMPC) {[(round(a, 4), round(b, 4)) for a, b in per_seed]}")
    assert ok


def test_criterion_08_solve_time(criterion, disturbed_runs):
    runs, _ = disturbed_runs
    times = np.concatenate([runs["snmpc", s].solve_time for s in SEEDS])
    mean_ms, max_ms = 1e3 * times.mean(), 1e3 * times.max()
    ok = mean_ms < 20 and max_ms < 80
    criterion(8, ok, f"SNMPC RTI step over {times.size} steps: mean {mean_ms:.2f} ms (< 20), max {max_ms:.2f} ms (< 80)")
    assert ok


def test_criterion_09_determinism(criterion, tmp_path):
    cfg = {"schema_version": 1, "duration": 8.0, "seeds": [0, 7], "track": dict(zip(("kind", "straight_len", "radius", "v_max"), TRACK))}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    codes = [cli.main(["run", str(path), "--out", str(tmp_path / f"run{i}"), "--parallel", "1"]) for i in range(2)]
    logs = sorted(p.relative_to(tmp_path / "run0") for p in (tmp_path / "run0").rglob("simlog.csv"))
    identical = all((tmp_path / "run0" / p).read_bytes() == (tmp_path / "run1" / p).read_bytes() for p in logs)
    ok = codes == [0, 0] and len(logs) == 4 and identical
    criterion(9, ok, f"{len(logs)} SimLog CSVs from two executions byte-identical: {identical}")
    assert ok


def test_criterion_10_solver_unit_suite(criterion, params, track):
    # QP: KKT residuals on 100 random strictly convex QPs
    rng = np.random.default_rng(10)
    worst_kkt = 0.0
    solved = 0
    for _ in range(100):
        n, m = int(rng.integers(2, 40)), int(rng.integers(1, 60))
        M = rng.normal(size=(n, n))
        C = rng.normal(size=(m, n))
        x_feas = rng.normal(size=n)
        res = solve_qp(M @ M.T + 1e-2 * np.eye(n), rng.normal(size=n), C=C,
                       lb=C @ x_feas - rng.uniform(0, 1, m), ub=C @ x_feas + rng.uniform(0, 1, m), max_iter=1000)
        solved += res.status == SOLVED
        worst_kkt = max(worst_kkt, res.kkt_residual)

    # Gauss-Newton gradient vs central differences on N_p = 5 problems
    worst_grad = 0.0
    cfg = OcpConfig(T_p=0.4, T_u=0.16)
    for k, stochastic in ((150, False), (400, True), (700, True)):
        x0 = np.array([track.x_ref[k], track.y_ref[k] - 0.2, track.psi_ref[k] + 0.03, track.v_ref[k], 0.05, 0.2, 0.04, 0.3])
        ref = reference_window(track, x0, cfg.N_p + 1, cfg.T_s)
        nlp = build_snmpc_problem(cfg, make_collocation(cfg), x0, ref, params) if stochastic else build_nominal_problem(cfg, x0, ref, params)
        U = rng.normal(scale=[0.3, 0.02], size=(5, 2))
        qp = nlp.linearize(nlp.rollout(U), U)
        fd = np.empty(U.size)
        for i in range(U.size):
            e = np.zeros(U.size)
            e[i] = 1e-5
            up, dn = (U.ravel() + e).reshape(U.shape), (U.ravel() - e).reshape(U.shape)
            fd[i] = (nlp.cost(nlp.rollout(up), up) - nlp.cost(nlp.rollout(dn), dn)) / 2e-5
        worst_grad = max(worst_grad, np.linalg.norm(qp.grad - fd) / np.linalg.norm(fd))

    # RK4 observed order on a cornering state
    x = np.array([0, 0, 0.2, 18, 0.3, 0.2, 0.05, 0.5])
    u = np.array([0.3, 0.02])
    ref_x = rk4_step(x, u, 0.64, 1024, params)
    errs = [np.abs(rk4_step(x, u, 0.64, n, params) - ref_x).max() for n in (4, 8, 16)]
    order = min(math.log2(errs[i] / errs[i + 1]) for i in range(2))

    ok = solved == 100 and worst_kkt < 1e-8 and worst_grad < 1e-4 and order >= 3.8
    criterion(10, ok, f"QP {solved}/100 solved, worst KKT {worst_kkt:.1e} (< 1e-8); GN gradient rel. error "
                      f"{worst_grad:.1e} (< 1e-4); RK4 observed order {order:.2f} (>= 3.8)")
    assert ok
