"""Adjoint of the single-frame sPOD-G reduced problem and its control gradient.

The reduced state equation is ``M(x) x' = F(x, u)`` with ``x = [a; z]``.
Writing ``E = dM/dt - P + dF/dx`` where ``P[:, l] = (dM/dx_l) x'``, the
adjoint ``lam = [a_sa; z_sa]`` solves

    M^T lam' = -E^T lam - dl/dx,    M(t_f)^T lam(t_f) = 0,

with ``l`` the tracking integrand, and the gradient of the reduced cost is
``mu u + B^T V a_sa + B^T W a z_sa``. Blocks follow the layout

    E = [ E11  E21 ]     E11: r x r, E21: r x K,
        [ E12  E22 ]     E12: K x r, E22: K x K.

Only the single-frame, constant-matrix case is implemented, where every
z-derivative of ``M1, M2, N, A1, A2`` vanishes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import shift as _shift
from .fom import FomSystem, IntegrationDiverged, TimeGrid
from .spod import (
    COND_LIMIT, GalerkinCache, NearDegenerateMassMatrix, ReducedTrajectory, SpodBasis, SpodDynamics,
)

RK4_B = np.array([1 / 6, 1 / 3, 1 / 3, 1 / 6])


@dataclass(frozen=True)
class EBlocks:
    E11: np.ndarray
    E12: np.ndarray
    E21: np.ndarray
    E22: np.ndarray

    def matrix(self) -> np.ndarray:
        return np.block([[self.E11, self.E21], [self.E12, self.E22]])


@dataclass(frozen=True)
class AdjointReducedTrajectory:
    """Reduced adjoint variables on the time grid.

    ``control_term``, when present, is the exact ``dJ/du - mu u`` of the
    discrete reduced problem; it is set by the discrete adjoint, whose
    stage-wise control sensitivities do not collapse onto node values.
    """

    a_sa: np.ndarray
    z_sa: np.ndarray
    control_term: np.ndarray | None = None


def _require_constant(cache: GalerkinCache):
    if not cache.constant_matrices:
        raise ValueError("E-blocks are implemented for the single-frame constant-matrix cache only")


def assemble_e_blocks(state: ReducedTrajectory, state_rates: np.ndarray, cache: GalerkinCache,
                      u: np.ndarray, t_index: int, dynamics: SpodDynamics | None = None) -> EBlocks:
    """E-blocks at one time node, from the state and its rates ``[a'; z']`` there."""
    _require_constant(cache)
    dyn = dynamics or SpodDynamics(cache)
    c = cache.mats
    M2, N, A1, A2 = c["M2"][0], c["N"][0], c["A1"][0], c["A2"][0]
    a = state.amplitudes[:, t_index]
    z = state.shifts[0, t_index]
    adot = state_rates[:-1, t_index]
    zdot = state_rates[-1, t_index]
    uj = u[:, t_index]
    Hu = dyn.H(z) @ uj
    E11 = A1 - zdot * N
    E21 = (N @ adot + Hu)[:, None]
    E12 = (adot @ N.T - adot @ N - 2 * zdot * (a @ M2) + a @ (A2 + A2.T) + Hu)[None, :]
    E22 = np.array([[2 * a @ M2 @ adot + a @ (dyn.dH(z) @ uj)]])
    return EBlocks(E11, E12, E21, E22)


def tracking_sources(state: ReducedTrajectory, basis: SpodBasis, sys: FomSystem) -> np.ndarray:
    """``[V^T C^T C (V a - q_d); (W a)^T C^T C (V a - q_d)]`` at every node."""
    grid = sys.grid
    U = basis.modes
    z = state.shifts[0]
    q = _shift.shift_columns(U @ state.amplitudes, z, grid)
    res = sys.CTC[:, None] * (q - sys.q_d)
    la = U.T @ _shift.shift_columns(res, z, grid, transpose=True)
    lz = np.einsum("ij,ij->j", state.amplitudes, U.T @ _shift.shift_columns(res, z, grid, deriv=1, transpose=True))
    return np.vstack([la, lz[None, :]])


def _terminal(M, n):
    cond = np.linalg.cond(M, 1)
    if not cond <= COND_LIMIT:
        raise NearDegenerateMassMatrix(n - 1, cond)
    # homogeneous system with nonsingular matrix
    return np.linalg.solve(M.T, np.zeros(M.shape[0]))


def solve_spod_frto_adjoint(state: ReducedTrajectory, cache: GalerkinCache, basis: SpodBasis,
                            sys: FomSystem, tg: TimeGrid, u: np.ndarray,
                            discrete: bool = False) -> AdjointReducedTrajectory:
    """Backward solve of the reduced adjoint system.

    The default integrates the adjoint equation with RK4 backwards in time,
    interpolating mass matrix, E-blocks and sources linearly at half steps,
    and a dense solve per stage. ``discrete=True`` instead returns the exact
    adjoint of the forward RK4 solve (uses its stored stage states); its
    gradient matches finite differences of :func:`spod.spod_cost` to
    roundoff-limited accuracy.
    """
    _require_constant(cache)
    if discrete:
        return _discrete_adjoint(state, cache, basis, sys, tg, u)
    dyn = SpodDynamics(cache, state.frozen)
    n = tg.n
    r = state.amplitudes.shape[0]
    src = tracking_sources(state, basis, sys)
    X = np.vstack([state.amplitudes, state.shifts])
    if state.frozen:
        Ms = np.repeat(cache.mats["M1"][0][None], n, axis=0)
        Es = np.repeat(cache.mats["A1"][0][None], n, axis=0)
        src = src[:r]
    else:
        Ms = np.array([dyn.mass(X[:, j]) for j in range(n)])
        Es = np.array([assemble_e_blocks(state, state.node_rates, cache, u, j, dyn).matrix() for j in range(n)])
    lam = np.empty_like(src)
    lam[:, -1] = _terminal(Ms[-1], n)
    h = tg.dt

    def f(M, E, s, y):
        return np.linalg.solve(M.T, E.T @ y + s)

    y = lam[:, -1]
    for j in range(n - 2, -1, -1):
        Mm, Em, sm = 0.5 * (Ms[j] + Ms[j + 1]), 0.5 * (Es[j] + Es[j + 1]), 0.5 * (src[:, j] + src[:, j + 1])
        if np.linalg.cond(Mm, 1) > COND_LIMIT:
            raise NearDegenerateMassMatrix(j, np.linalg.cond(Mm, 1))
        k1 = f(Ms[j + 1], Es[j + 1], src[:, j + 1], y)
        k2 = f(Mm, Em, sm, y + 0.5 * h * k1)
        k3 = f(Mm, Em, sm, y + 0.5 * h * k2)
        k4 = f(Ms[j], Es[j], src[:, j], y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(y).all():
            raise IntegrationDiverged(j, "sPOD-G adjoint")
        lam[:, j] = y
    if state.frozen:
        return AdjointReducedTrajectory(lam, np.zeros((1, n)))
    return AdjointReducedTrajectory(lam[:r], lam[r:])


def _discrete_adjoint(state, cache, basis, sys, tg, u):
    dyn = SpodDynamics(cache, state.frozen)
    n, h = tg.n, tg.dt
    w = tg.weights()
    r = state.amplitudes.shape[0]
    src = tracking_sources(state, basis, sys)
    if state.frozen:
        src[r:] = 0.0
    lam = np.empty_like(src)
    ubar = np.zeros_like(u)
    y = w[-1] * src[:, -1]
    lam[:, -1] = y
    for j in range(n - 2, -1, -1):
        um = 0.5 * (u[:, j] + u[:, j + 1])
        controls = (u[:, j], um, um, u[:, j + 1])
        jac = [dyn.jacobians(state.stages[j, i], controls[i])[:2] for i in range(4)]
        if state.frozen:
            for fx, _ in jac:
                fx[:, r:] = 0.0
        kbar = [None] * 4
        xbar = [None] * 4
        kbar[3] = h * RK4_B[3] * y
        xbar[3] = jac[3][0].T @ kbar[3]
        kbar[2] = h * RK4_B[2] * y + h * xbar[3]
        xbar[2] = jac[2][0].T @ kbar[2]
        kbar[1] = h * RK4_B[1] * y + 0.5 * h * xbar[2]
        xbar[1] = jac[1][0].T @ kbar[1]
        kbar[0] = h * RK4_B[0] * y + 0.5 * h * xbar[1]
        xbar[0] = jac[0][0].T @ kbar[0]
        mid = 0.5 * (jac[1][1].T @ kbar[1] + jac[2][1].T @ kbar[2])
        ubar[:, j] += jac[0][1].T @ kbar[0] + mid
        ubar[:, j + 1] += mid + jac[3][1].T @ kbar[3]
        y = y + xbar[0] + xbar[1] + xbar[2] + xbar[3] + w[j] * src[:, j]
        lam[:, j] = y
    # scale to the magnitude of the continuous adjoint
    lam /= h
    z_sa = np.zeros((1, n)) if state.frozen else lam[r:]
    return AdjointReducedTrajectory(lam[:r], z_sa, control_term=ubar / w)


def spod_frto_gradient(u: np.ndarray, adj: AdjointReducedTrajectory, state: ReducedTrajectory,
                       basis: SpodBasis, sys: FomSystem) -> np.ndarray:
    """``mu u + B^T V a_sa + B^T W a z_sa`` with ``V, W`` at the state shifts."""
    if adj.control_term is not None:
        return sys.mu * u + adj.control_term
    grid = sys.grid
    U = basis.modes
    z = state.shifts[0]
    va = _shift.shift_columns(U @ adj.a_sa, z, grid)
    wa = _shift.shift_columns(U @ state.amplitudes, z, grid, deriv=1) * adj.z_sa[0][None, :]
    return sys.mu * u + sys.B.T @ (va + wa)
