"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The desk-scale mode-efficiency study (criterion 8) takes several minutes on
one core. The full-scale spot check (criterion 9) runs only when
``SPODCONTROL_FULL_SCALE=1``; see ``scripts/full_scale_example1.py``.
"""
import os
import time

import numpy as np
import pytest
import scipy.linalg

from spodcontrol import pod
from spodcontrol.fom import FomSystem, SpatialGrid, TimeGrid, cost, gradient, solve_adjoint, solve_state
from spodcontrol.frto_adjoint import solve_spod_frto_adjoint, spod_frto_gradient
from spodcontrol.optimizer import ModePolicy, OptimizerConfig, optimize
from spodcontrol.problems import build_example
from spodcontrol.shift import build_shift_operator, estimate_shifts
from spodcontrol.spod import (
    as_pod_basis, assemble_galerkin_cache, co_moving_snapshots, solve_spod_rom, spod_cost,
    spod_decompose_single_frame,
)

from conftest import periodic_gaussian, record_criterion


def fd_gradient(J, u, h):
    """Central differences of ``J`` with respect to every entry of ``u``."""
    g = np.empty_like(u)
    for idx in np.ndindex(u.shape):
        e = np.zeros_like(u)
        e[idx] = h
        g[idx] = (J(u + e) - J(u - e)) / (2 * h)
    return g


def relative_gradient_error(tg, g, J, u, h):
    # g is the L2(0, T) representer, so dJ/du_kj = w_j g_kj
    fd = fd_gradient(J, u, h)
    disc = g * tg.weights()[None, :]
    return np.linalg.norm(disc - fd) / np.linalg.norm(fd)


def random_fom(rng, m, n, n_c, length=10.0, mu=1e-2):
    grid = SpatialGrid(m, length)
    tg = TimeGrid(n, 0.5 * grid.dx)
    q0 = periodic_gaussian(grid.x, rng.uniform(0, length), rng.uniform(1, 3), length)
    q_d = 0.3 * rng.standard_normal((m, n))
    return FomSystem.build(grid, rng.uniform(0.2, 1.5), n_c, q0, q_d, mu), tg


def test_criterion_01_fom_gradient():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    errs = []
    for _ in range(20):
        m, n, n_c = int(rng.integers(8, 33)), int(rng.integers(2, 17)), int(rng.integers(1, 5))
        sys, tg = random_fom(rng, m, n, n_c)
        u = rng.standard_normal((n_c, n))
        g = gradient(sys, u, solve_adjoint(sys, tg, solve_state(sys, tg, u), discrete=True))
        errs.append(relative_gradient_error(tg, g, lambda v: cost(sys, tg, solve_state(sys, tg, v), v), u, 1e-4))
    wall = time.perf_counter() - t0
    ok = max(errs) < 1e-5 and wall < 10
    record_criterion(1, ok, f"FOM gradient vs FD, 20 instances: max rel err {max(errs):.2e} (< 1e-5), {wall:.1f}s")
    assert ok


def small_spod(seed, m=32, n=10, r=2, n_c=3, length=8.0):
    rng = np.random.default_rng(seed)
    grid = SpatialGrid(m, length)
    tg = TimeGrid(n, 0.5 * grid.dx)
    q0 = periodic_gaussian(grid.x, 2.0, 1.0, length)
    q_d = periodic_gaussian(grid.x, 2.5, 1.0, length)[:, None] + 0.05 * rng.standard_normal((m, n))
    sys = FomSystem.build(grid, 1.0, n_c, q0, q_d, 1e-2)
    Q = solve_state(sys, tg, 0.3 * rng.standard_normal((n_c, n)))
    basis = spod_decompose_single_frame(Q, estimate_shifts(Q, grid), r, grid)
    cache = assemble_galerkin_cache(basis, sys, None)
    return sys, tg, basis, cache, 0.2 * rng.standard_normal((n_c, n)), rng


def test_criterion_02_reduced_gradients():
    t0 = time.perf_counter()
    pod_errs, spod_errs = [], []
    for seed in range(6):
        r, n = 1 + seed % 3, 6 + seed
        sys, tg, basis, cache, u, rng = small_spod(seed, n=n, r=r)

        pb = pod.compute_pod_basis(solve_state(sys, tg, u), r)
        a = pod.solve_pod_rom(pb, sys, tg, u)
        g = pod.pod_frto_gradient(pb, sys, u, pod.pod_frto_adjoint(pb, sys, tg, a, discrete=True))
        J = lambda v: pod.pod_cost(pb, sys, tg, pod.solve_pod_rom(pb, sys, tg, v), v)  # noqa: E731
        pod_errs.append(relative_gradient_error(tg, g, J, u, 1e-4))

        traj = solve_spod_rom(cache, basis, sys, tg, u)
        adj = solve_spod_frto_adjoint(traj, cache, basis, sys, tg, u, discrete=True)
        g = spod_frto_gradient(u, adj, traj, basis, sys)
        J = lambda v: spod_cost(basis, sys, tg, solve_spod_rom(cache, basis, sys, tg, v), v)  # noqa: E731
        spod_errs.append(relative_gradient_error(tg, g, J, u, 1e-5))
    wall = time.perf_counter() - t0
    ok = max(pod_errs) < 1e-4 and max(spod_errs) < 1e-4 and wall < 30
    record_criterion(2, ok, f"reduced gradients vs FD: POD {max(pod_errs):.2e}, sPOD {max(spod_errs):.2e} "
                            f"(< 1e-4), {wall:.1f}s")
    assert ok


def test_criterion_03_eckart_young():
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(50):
        m, n = rng.integers(2, 60, size=2)
        Q = rng.standard_normal((m, n)) * rng.uniform(0.1, 10)
        p = int(rng.integers(1, min(m, n) + 1))
        U = pod.compute_pod_basis(Q, p).modes
        resid = np.linalg.norm(Q - U @ (U.T @ Q)) ** 2
        s = scipy.linalg.svd(Q, compute_uv=False, lapack_driver="gesvd")
        tail = float(np.sum(s[p:] ** 2))
        worst = max(worst, abs(resid - tail) / max(tail, np.sum(s ** 2) * 1e-16))
    ok = worst < 1e-8
    record_criterion(3, ok, f"Eckart-Young on 50 matrices: worst relative mismatch {worst:.2e} (< 1e-8)")
    assert ok


def test_criterion_04_shift_order():
    def error(m, frac=0.37, length=100.0, center=40.0, width2=7.0):
        grid = SpatialGrid(m, length)
        z = (17 + frac) * grid.dx
        f = periodic_gaussian(grid.x, center, width2, length)
        return np.abs(build_shift_operator(grid, z) @ f - periodic_gaussian(grid.x, center + z, width2, length)).max()

    errs = np.array([error(m) for m in (128, 256, 512, 1024)])
    orders = np.log2(errs[:-1] / errs[1:])
    rng = np.random.default_rng(404)
    grid = SpatialGrid(64, 10.0)
    row_dev = max(np.abs(np.asarray(build_shift_operator(grid, z).matrix.sum(axis=1)).ravel() - 1).max()
                  for z in rng.uniform(-50, 50, 1000))
    ok = orders.min() >= 5.5 and row_dev <= 1e-12
    record_criterion(4, ok, f"shift order {np.round(orders, 2).tolist()} (>= 5.5), row-sum deviation {row_dev:.1e}")
    assert ok


def test_criterion_05_rank_collapse():
    sys, tg, _ = build_example(1, 0.25)
    Q = solve_state(sys, tg, np.zeros((sys.n_c, tg.n)))
    lab = np.linalg.svd(Q, compute_uv=False)
    co = np.linalg.svd(co_moving_snapshots(Q, estimate_shifts(Q, sys.grid), sys.grid), compute_uv=False)
    ok = co[1] / co[0] < 1e-3 and lab[1] / lab[0] > 1e-1
    record_criterion(5, ok, f"sigma2/sigma1 co-moving {co[1] / co[0]:.1e} (< 1e-3), lab {lab[1] / lab[0]:.2f} (> 0.1)")
    assert ok


def test_criterion_06_degeneracy():
    worst = 0.0
    for seed in range(5):
        sys, tg, basis, cache, u, rng = small_spod(seed, r=1 + seed % 3, n=12)
        traj = solve_spod_rom(cache, basis, sys, tg, u, freeze_shift=True)
        pb = as_pod_basis(basis)
        a = pod.solve_pod_rom(pb, sys, tg, u)
        dJ = abs(spod_cost(basis, sys, tg, traj, u) - pod.pod_cost(pb, sys, tg, a, u))
        d_state = np.abs(traj.amplitudes - a).max()
        d_adj = 0.0
        for discrete in (False, True):
            adj = solve_spod_frto_adjoint(traj, cache, basis, sys, tg, u, discrete=discrete)
            ref = pod.pod_frto_adjoint(pb, sys, tg, a, discrete=discrete)
            if discrete:
                # the discrete variant stores stage sums; compare the resulting gradients
                d_adj = max(d_adj, np.abs(spod_frto_gradient(u, adj, traj, basis, sys)
                                          - pod.pod_frto_gradient(pb, sys, u, ref)).max())
            else:
                d_adj = max(d_adj, np.abs(adj.a_sa - ref).max(), np.abs(adj.z_sa).max())
        worst = max(worst, dJ, d_state, d_adj, np.abs(traj.shifts).max())
    ok = worst < 1e-8
    record_criterion(6, ok, f"pinned-shift sPOD-G vs POD-G: max deviation {worst:.1e} (< 1e-8)")
    assert ok


def test_criterion_07_commutation():
    rng = np.random.default_rng(707)
    worst = 0.0
    for _ in range(10):
        sys, tg = random_fom(rng, 24, 10, 2)
        b = pod.compute_pod_basis(rng.standard_normal((24, 12)), int(rng.integers(1, 8)))
        a = pod.solve_pod_rom(b, sys, tg, rng.standard_normal((2, tg.n)))
        frto = pod.pod_frto_adjoint(b, sys, tg, a)
        fotr = pod.pod_fotr_adjoint(b, b, sys, tg, a)
        worst = max(worst, np.abs(frto - fotr).max() / max(1.0, np.abs(frto).max()))
    ok = worst <= 1e-12
    record_criterion(7, ok, f"FOTR with shared basis vs FRTO: max deviation {worst:.1e} (<= 1e-12)")
    assert ok


# ---- desk-scale optimisation study --------------------------------------------------

DESK_ITERS = 200
DESK_SAMPLES = 800
SPOD_MODES = (1, 2, 3, 4, 5)
POD_MODES = (5, 10, 15, 20, 30, 40, 60, 80)
WITHIN = 0.25


def minimal_modes(sys, tg, method, candidates, J_ref, runs):
    """Smallest candidate whose final FOM cost is within ``WITHIN`` of ``J_ref``."""
    for p in candidates:
        config = OptimizerConfig(n_iter=DESK_ITERS, n_samples=DESK_SAMPLES, mode_policy=ModePolicy.fixed(p))
        u, rec = optimize(sys, tg, config, method)
        runs[(method, p)] = rec
        if rec.final_J <= (1 + WITHIN) * J_ref:
            return p
    return None


@pytest.fixture(scope="module")
def desk_study():
    t0 = time.perf_counter()
    sys, tg, _ = build_example(2, 0.25)
    runs = {}
    _, rec = optimize(sys, tg, OptimizerConfig(n_iter=DESK_ITERS), "fom")
    runs[("fom", sys.grid.m)] = rec
    J_ref = rec.final_J
    p_spod = minimal_modes(sys, tg, "spod", SPOD_MODES, J_ref, runs)
    p_pod = minimal_modes(sys, tg, "pod", POD_MODES, J_ref, runs)
    return dict(J_ref=J_ref, p_spod=p_spod, p_pod=p_pod, runs=runs, wall=time.perf_counter() - t0)


@pytest.mark.slow
def test_criterion_08_mode_efficiency(desk_study):
    s = desk_study
    p_s, p_p = s["p_spod"], s["p_pod"]
    ok = p_s is not None and p_p is not None and p_p >= 3 * p_s and s["wall"] < 1800
    finals = ", ".join(f"{m}{p}={rec.final_J:.3g}" for (m, p), rec in s["runs"].items() if m != "fom")
    record_criterion(8, ok, f"example 2 desk scale, {DESK_ITERS} iterations each: J_fom={s['J_ref']:.4g}, "
                            f"minimal modes sPOD {p_s} vs POD {p_p} (need 3x); {finals}; {s['wall'] / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_09_full_scale_example1():
    if os.environ.get("SPODCONTROL_FULL_SCALE") != "1":
        record_criterion(9, None, "SKIP  full-scale run takes hours; set SPODCONTROL_FULL_SCALE=1")
        pytest.skip("full-scale run; set SPODCONTROL_FULL_SCALE=1")
    sys, tg, _ = build_example(1, 1.0)
    _, rec_f = optimize(sys, tg, OptimizerConfig(), "fom")
    _, rec_s = optimize(sys, tg, OptimizerConfig(mode_policy=ModePolicy.fixed(12)), "spod")
    ok_f = abs(rec_f.final_J - 1.229) <= 0.05 * 1.229
    ok_s = abs(rec_s.final_J - 1.306) <= 0.20 * 1.306
    record_criterion(9, ok_f and ok_s, f"full scale example 1: FOM J={rec_f.final_J:.4g} (1.229 +-5%), "
                                       f"sPOD r=12 J={rec_s.final_J:.4g} (1.306 +-20%)")
    assert ok_f and ok_s


def small_transport_runs():
    grid = SpatialGrid(64, 20.0)
    tg = TimeGrid(60, 0.75 * grid.dx)
    q0 = periodic_gaussian(grid.x, 5.0, 2.0, 20.0)
    q_d = np.column_stack([periodic_gaussian(grid.x, 5.0 + 0.7 * t, 2.0, 20.0) for t in tg.t])
    sys = FomSystem.build(grid, 1.0, 5, q0, q_d, 1e-3)
    runs = {}
    for method, p in (("fom", 64), ("pod", 4), ("spod", 2)):
        config = OptimizerConfig(n_iter=40, n_samples=128, mode_policy=ModePolicy.fixed(p))
        runs[(method, p)] = optimize(sys, tg, config, method)[1]
    return runs


@pytest.mark.slow
def test_criterion_10_armijo(desk_study):
    runs = dict(desk_study["runs"])
    runs.update({("small-" + m, p): rec for (m, p), rec in small_transport_runs().items()})
    accepted = violations = 0
    for rec in runs.values():
        for r in rec.iterations:
            if r.step > 0:
                accepted += 1
                violations += not r.J_trial <= r.J_surrogate - rec.armijo_c * r.step * r.dir_sq
    ok = accepted > 0 and violations == 0
    record_criterion(10, ok, f"Armijo re-check over {len(runs)} runs: {accepted} accepted steps, "
                             f"{violations} violations")
    assert ok
