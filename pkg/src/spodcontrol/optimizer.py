"""Gradient descent with a reduced-order surrogate inside a two-way backtracking line search.

Every iteration solves the full-order state and adjoint equations for the
gradient, rebuilds a reduced basis from the current snapshots, and picks the
step size by Armijo backtracking on the reduced (surrogate) cost only.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import pod as _pod
from . import spod as _spod
from .fom import FomSystem, IntegrationDiverged, TimeGrid, cost, gradient, l2_inner, solve_adjoint, solve_state
from .matio import write_csv
from .shift import estimate_shifts

log = logging.getLogger(__name__)

METHODS = ("fom", "pod", "spod")
CSV_COLUMNS = ["iter", "J_fom", "J_surrogate", "grad_norm", "rel_grad", "step", "modes", "shift_refresh",
               "wall_ms", "J_trial", "dir_sq"]


@dataclass(frozen=True)
class ModePolicy:
    """Either a fixed number of modes or a relative singular-value tolerance."""

    kind: str = "fixed"
    value: float = 10

    def __post_init__(self):
        if self.kind not in ("fixed", "tolerance"):
            raise ValueError(f"unknown mode policy {self.kind!r}")
        if not self.value > 0:
            raise ValueError("mode policy value must be positive")

    @classmethod
    def fixed(cls, p: int) -> "ModePolicy":
        return cls("fixed", int(p))

    @classmethod
    def tolerance(cls, eps: float) -> "ModePolicy":
        return cls("tolerance", float(eps))

    def __call__(self, singular_values) -> int:
        s = np.asarray(singular_values)
        if self.kind == "fixed":
            return int(min(self.value, s.size))
        return _pod.select_modes_by_tolerance(s, self.value)


@dataclass(frozen=True)
class OptimizerConfig:
    mu: float = 1e-3
    delta: float = 1e-4
    omega0: float = 1.0
    beta: float = 0.5
    n_iter: int = 100000
    n_samples: int | None = 800
    armijo_c: float = 1e-4
    stagnation_window: int = 5
    stagnation_rel_tol: float = 1e-3
    omega_min: float = 1e-12
    omega_max: float = 1e3
    mode_policy: ModePolicy = field(default_factory=ModePolicy)
    adjoint: str = "discrete"
    threads: int = 1

    def __post_init__(self):
        for name in ("mu", "delta", "omega0", "beta", "n_iter", "armijo_c", "stagnation_window",
                     "stagnation_rel_tol", "omega_min", "omega_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.beta < 1:
            raise ValueError("beta must be < 1")
        if not self.armijo_c < 0.5:
            raise ValueError("armijo_c must lie in (0, 0.5)")
        if self.n_samples is not None and self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.adjoint not in ("discrete", "otd"):
            raise ValueError("adjoint must be 'discrete' or 'otd'")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class IterationRecord:
    iter: int
    J_fom: float
    J_surrogate: float
    grad_norm: float
    rel_grad: float
    step: float
    modes: int
    shift_refresh: bool
    wall_ms: float
    J_trial: float
    dir_sq: float


@dataclass
class ConvergenceRecord:
    iterations: list = field(default_factory=list)
    exit_reason: str = ""
    method: str = ""
    armijo_c: float = 1e-4

    def append(self, rec: IterationRecord):
        self.iterations.append(rec)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.iterations])

    @property
    def final_cost(self) -> float:
        return self.iterations[-1].J_fom if self.iterations else math.nan

    @property
    def average_modes(self) -> float:
        return float(np.mean(self.column("modes"))) if self.iterations else math.nan

    def to_csv(self, path) -> None:
        write_csv(path, CSV_COLUMNS, ([getattr(r, c) for c in CSV_COLUMNS] for r in self.iterations))


@dataclass(frozen=True)
class LineSearchResult:
    step: float
    J0: float
    J_trial: float
    evaluations: int
    stagnated: bool


def _armijo(J_trial, J0, c, omega, dir_sq):
    return J_trial <= J0 - c * omega * dir_sq


def _safe(fn, v):
    try:
        val = fn(v)
    except (IntegrationDiverged, _spod.NearDegenerateMassMatrix, FloatingPointError):
        return math.inf
    return val if np.isfinite(val) else math.inf


def two_way_backtracking(omega_prev: float, u: np.ndarray, g: np.ndarray, surrogate_cost: Callable,
                         dir_sq: float, J0: float | None = None, armijo_c: float = 1e-4, beta: float = 0.5,
                         omega_max: float = 1e3, omega_min: float = 1e-12) -> LineSearchResult:
    """Step size along ``-g`` from the previous step, growing or shrinking by ``beta``.

    If the previous step already satisfies the Armijo condition it is enlarged
    while the condition keeps holding (up to ``omega_max``); otherwise it is
    reduced until the condition holds. Falling below ``omega_min`` is reported
    as stagnation. ``dir_sq`` is the squared norm of ``g`` in the same inner
    product as the gradient.
    """
    if not dir_sq > 0:
        raise ValueError("line search needs a nonzero gradient")
    evals = 0
    if J0 is None:
        J0 = surrogate_cost(u)
        evals += 1

    def trial(omega):
        nonlocal evals
        evals += 1
        return _safe(surrogate_cost, u - omega * g)

    omega = float(min(omega_prev, omega_max))
    J = trial(omega)
    if _armijo(J, J0, armijo_c, omega, dir_sq):
        while omega / beta <= omega_max:
            J_up = trial(omega / beta)
            if not _armijo(J_up, J0, armijo_c, omega / beta, dir_sq):
                break
            omega, J = omega / beta, J_up
        return LineSearchResult(omega, J0, J, evals, False)
    while True:
        omega *= beta
        if omega < omega_min:
            return LineSearchResult(omega, J0, J, evals, True)
        J = trial(omega)
        if _armijo(J, J0, armijo_c, omega, dir_sq):
            return LineSearchResult(omega, J0, J, evals, False)


def is_stagnant(costs, window: int, rel_tol: float) -> bool:
    """Relative decrease over the last ``window`` iterations below ``rel_tol``."""
    if len(costs) <= window:
        return False
    old, new = costs[-1 - window], costs[-1]
    return (old - new) <= rel_tol * abs(old)


def refresh_shifts_if_stagnant(record: ConvergenceRecord, current_state: np.ndarray, grid, shifts: np.ndarray,
                               config: OptimizerConfig, since: int = 0, force: bool = False):
    """Re-estimate shifts from ``current_state`` if progress has stalled.

    Only iterations after index ``since`` (the last refresh) count toward the
    stagnation window, so one stall triggers one refresh. ``force`` is used
    for a line-search stagnation signal. Returns ``(shifts, refreshed)``.
    """
    costs = [r.J_fom for r in record.iterations[since:]]
    if force or is_stagnant(costs, config.stagnation_window, config.stagnation_rel_tol):
        return estimate_shifts(current_state, grid), True
    return shifts, False


class _Surrogate:
    """Reduced model built from one snapshot matrix; ``__call__`` gives the surrogate cost."""

    def __init__(self, method, sys, tg, Q, config, shifts):
        self.method = method
        self.sys, self.tg = sys, tg
        if method == "fom":
            self.modes = sys.grid.m
        elif method == "pod":
            self.basis = _pod.basis_from_spectrum(Q, config.mode_policy)
            self.ops = _pod.pod_operators(self.basis, sys)
            self.modes = self.basis.p
        else:
            co = _spod.co_moving_snapshots(Q, shifts, sys.grid)
            U, s = _pod._svd(co)
            p = min(config.mode_policy(s), U.shape[1])
            frame = _spod.SpodFrame(np.ascontiguousarray(U[:, :p]), s)
            self.basis = _spod.SpodBasis((frame,), np.asarray(shifts)[None, :])
            self.cache = _spod.assemble_galerkin_cache(self.basis, sys, config.n_samples, True, config.threads)
            self.dyn = _spod.SpodDynamics(self.cache)
            self.modes = p

    def __call__(self, u) -> float:
        sys, tg = self.sys, self.tg
        if self.method == "fom":
            return cost(sys, tg, solve_state(sys, tg, u), u)
        if self.method == "pod":
            a = _pod.solve_pod_rom(self.basis, sys, tg, u, self.ops)
            return _pod.pod_cost(self.basis, sys, tg, a, u)
        traj = _spod.solve_spod_rom(self.cache, self.basis, sys, tg, u, 0.0, dynamics=self.dyn)
        return _spod.spod_cost(self.basis, sys, tg, traj, u)


def optimize(sys: FomSystem, tg: TimeGrid, config: OptimizerConfig, method: str = "fom",
             u0: np.ndarray | None = None, callback=None):
    """Run the descent loop; returns ``(u, ConvergenceRecord)``.

    Exit reasons: ``converged`` (relative gradient below ``delta``, checked
    before stepping), ``max_iter`` and ``stagnated``. With ``method='spod'``
    the shifts come from the uncontrolled solution and are re-estimated from
    the current iterate whenever progress stalls; a stall right after a
    refresh ends the run.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    u = np.zeros((sys.n_c, tg.n)) if u0 is None else np.array(u0, dtype=float)
    record = ConvergenceRecord(method=method, armijo_c=config.armijo_c)
    discrete = config.adjoint == "discrete"
    shifts = None
    if method == "spod":
        shifts = estimate_shifts(solve_state(sys, tg, np.zeros_like(u)), sys.grid)
    omega = config.omega0
    g1 = None
    last_refresh = 0
    pending_refresh = False
    refresh_gain_ref = math.inf  # cost at the last refresh

    for it in range(1, config.n_iter + 1):
        t0 = time.perf_counter()
        Q = solve_state(sys, tg, u)
        J = cost(sys, tg, Q, u)
        g = gradient(sys, u, solve_adjoint(sys, tg, Q, discrete=discrete))
        dir_sq = l2_inner(tg, g, g)
        gn = math.sqrt(dir_sq)
        if g1 is None:
            g1 = gn
        rel = gn / g1 if g1 > 0 else 0.0
        refreshed = False
        if pending_refresh:
            shifts = estimate_shifts(Q, sys.grid)
            refreshed, pending_refresh = True, False
            last_refresh, refresh_gain_ref = len(record.iterations), J

        if gn == 0.0 or rel < config.delta:
            record.append(IterationRecord(it, J, math.nan, gn, rel, 0.0, 0, refreshed,
                                          1e3 * (time.perf_counter() - t0), math.nan, dir_sq))
            record.exit_reason = "converged"
            break

        surrogate, J_sur = _build_surrogate(method, sys, tg, Q, config, shifts, u)
        if not np.isfinite(J_sur) and method == "spod" and not refreshed:
            # surrogate diverged: one retry with fresh shifts
            shifts = estimate_shifts(Q, sys.grid)
            refreshed = True
            last_refresh, refresh_gain_ref = len(record.iterations), J
            surrogate, J_sur = _build_surrogate(method, sys, tg, Q, config, shifts, u)
        modes = surrogate.modes
        if not np.isfinite(J_sur):
            ls = LineSearchResult(omega, J_sur, math.inf, 0, True)
        else:
            ls = two_way_backtracking(omega, u, g, surrogate, dir_sq, J0=J_sur, armijo_c=config.armijo_c,
                                      beta=config.beta, omega_max=config.omega_max, omega_min=config.omega_min)
        if ls.stagnated and method == "spod" and not refreshed and J < refresh_gain_ref * (
                1 - config.stagnation_rel_tol):
            shifts = estimate_shifts(Q, sys.grid)
            refreshed = True
            last_refresh, refresh_gain_ref = len(record.iterations), J
            surrogate, J_sur = _build_surrogate(method, sys, tg, Q, config, shifts, u)
            modes = surrogate.modes
            if np.isfinite(J_sur):
                ls = two_way_backtracking(omega, u, g, surrogate, dir_sq, J0=J_sur, armijo_c=config.armijo_c,
                                          beta=config.beta, omega_max=config.omega_max,
                                          omega_min=config.omega_min)
        wall = 1e3 * (time.perf_counter() - t0)
        if ls.stagnated:
            record.append(IterationRecord(it, J, J_sur, gn, rel, 0.0, modes, refreshed, wall, ls.J_trial, dir_sq))
            record.exit_reason = "stagnated"
            break
        u = u - ls.step * g
        omega = ls.step
        record.append(IterationRecord(it, J, J_sur, gn, rel, ls.step, modes, refreshed, wall, ls.J_trial, dir_sq))
        if callback is not None:
            callback(record.iterations[-1])
        log.debug("iter %d J=%.6g rel=%.3g step=%.3g modes=%d", it, J, rel, ls.step, modes)

        costs = [r.J_fom for r in record.iterations[last_refresh:]]
        if is_stagnant(costs, config.stagnation_window, config.stagnation_rel_tol):
            if method == "spod" and J < refresh_gain_ref * (1 - config.stagnation_rel_tol):
                pending_refresh = True
            else:
                record.exit_reason = "stagnated"
                break
    else:
        record.exit_reason = "max_iter"

    if record.exit_reason != "converged":
        # report the cost of the returned control
        Q = solve_state(sys, tg, u)
        record.final_J = cost(sys, tg, Q, u)
    else:
        record.final_J = record.iterations[-1].J_fom
    return u, record


def _build_surrogate(method, sys, tg, Q, config, shifts, u):
    try:
        s = _Surrogate(method, sys, tg, Q, config, shifts)
    except _spod.DegenerateBasis:
        s = None
    if s is None:
        return _Dummy(), math.inf
    return s, _safe(s, u)


class _Dummy:
    modes = 0

    def __call__(self, u):
        return math.inf


def config_dict(config: OptimizerConfig) -> dict:
    d = asdict(config)
    d["mode_policy"] = f"{config.mode_policy.kind}:{config.mode_policy.value}"
    return d
