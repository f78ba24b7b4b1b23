"""POD bases and the POD-Galerkin reduced model with its optimality systems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .fom import FomSystem, TimeGrid, rk4_linear, rk4_linear_adjoint


@dataclass(frozen=True)
class PodBasis:
    """Truncated left singular vectors plus the full singular spectrum."""

    modes: np.ndarray
    singular_values: np.ndarray

    @property
    def p(self) -> int:
        return self.modes.shape[1]


def _svd(Q):
    U, s, _ = scipy.linalg.svd(Q, full_matrices=False, lapack_driver="gesdd")
    return U, s


def compute_pod_basis(snapshots: np.ndarray, p: int) -> PodBasis:
    """Best rank-``p`` basis of the snapshot matrix (Eckart-Young)."""
    m, n = snapshots.shape
    if not 1 <= p <= min(m, n):
        raise ValueError(f"p={p} outside [1, {min(m, n)}]")
    U, s = _svd(snapshots)
    return PodBasis(modes=np.ascontiguousarray(U[:, :p]), singular_values=s)


def basis_from_spectrum(snapshots: np.ndarray, policy) -> PodBasis:
    """Basis whose size is chosen by ``policy(singular_values) -> p``."""
    U, s = _svd(snapshots)
    p = min(int(policy(s)), U.shape[1])
    return PodBasis(modes=np.ascontiguousarray(U[:, :p]), singular_values=s)


def combined_pod_basis(state: np.ndarray, adjoint: np.ndarray, p: int) -> PodBasis:
    """Basis of concatenated state and adjoint snapshots.

    Each block is scaled to unit Frobenius norm first so that neither
    dominates the decomposition.
    """
    blocks = [X / np.linalg.norm(X) for X in (state, adjoint) if np.linalg.norm(X) > 0]
    return compute_pod_basis(np.hstack(blocks), p)


def select_modes_by_tolerance(singular_values, eps: float) -> int:
    """Number of singular values with ``s_i / s_1 > eps``, at least one."""
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0 or not s[0] > 0:
        raise ValueError("spectrum is empty or identically zero")
    if eps < 0:
        raise ValueError("tolerance must be non-negative")
    return max(int(np.count_nonzero(s / s[0] > eps)), 1)


@dataclass(frozen=True)
class PodOperators:
    """Galerkin-projected operators, computed once per basis."""

    Ar: np.ndarray   # U^T A U
    Br: np.ndarray   # U^T B
    a0: np.ndarray   # U^T q0


def pod_operators(basis: PodBasis, sys: FomSystem) -> PodOperators:
    U = basis.modes
    return PodOperators(Ar=U.T @ (sys.A @ U), Br=U.T @ sys.B, a0=U.T @ sys.q0)


def solve_pod_rom(basis: PodBasis, sys: FomSystem, tg: TimeGrid, u: np.ndarray,
                  ops: PodOperators | None = None) -> np.ndarray:
    """RK4 solve of ``a' = U^T A U a + U^T B u``, ``a(0) = U^T q0``; returns p x n."""
    ops = ops or pod_operators(basis, sys)
    return rk4_linear(ops.Ar, ops.Br @ u, tg.dt, ops.a0, what="POD state")


def reconstruct(basis: PodBasis, amplitudes: np.ndarray) -> np.ndarray:
    return basis.modes @ amplitudes


def pod_cost(basis: PodBasis, sys: FomSystem, tg: TimeGrid, a_p: np.ndarray, u: np.ndarray) -> float:
    from .fom import cost

    return cost(sys, tg, reconstruct(basis, a_p), u)


def _reduced_adjoint(U_adj, U_state, sys, tg, a_p, discrete, op=None):
    r = U_state @ a_p - sys.q_d
    source = U_adj.T @ (sys.CTC[:, None] * r)
    if discrete:
        # exact discrete adjoint is built on the forward (state) operator
        return rk4_linear_adjoint(op, source, tg.dt, tg.weights())
    opT = U_adj.T @ (sys.AT @ U_adj) if op is None else op.T
    A = rk4_linear(opT, source[:, ::-1], tg.dt, np.zeros(U_adj.shape[1]), what="POD adjoint")
    return A[:, ::-1]


def pod_frto_adjoint(basis: PodBasis, sys: FomSystem, tg: TimeGrid, a_p: np.ndarray,
                     discrete: bool = False, ops: PodOperators | None = None) -> np.ndarray:
    """Adjoint of the reduced problem: ``-a_pa' = (U^T A U)^T a_pa + U^T C^T C (U a_p - q_d)``.

    ``discrete=True`` returns the exact discrete adjoint of the reduced RK4
    solve instead of a backward RK4 sweep (see :func:`fom.solve_adjoint`).
    """
    ops = ops or pod_operators(basis, sys)
    return _reduced_adjoint(basis.modes, basis.modes, sys, tg, a_p, discrete, op=ops.Ar)


def pod_frto_gradient(basis: PodBasis, sys: FomSystem, u: np.ndarray, a_pa: np.ndarray) -> np.ndarray:
    """``mu u + B^T U a_pa``."""
    return sys.mu * u + (basis.modes.T @ sys.B).T @ a_pa


def pod_fotr_adjoint(state_basis: PodBasis, adjoint_basis: PodBasis, sys: FomSystem,
                     tg: TimeGrid, a_p: np.ndarray, discrete: bool = False) -> np.ndarray:
    """Galerkin projection of the full-order adjoint onto ``adjoint_basis``.

    ``-a_pa' = U_pa^T A^T U_pa a_pa + U_pa^T C^T C (U_p a_p - q_d)``,
    ``a_pa(t_f) = 0``. With ``adjoint_basis = state_basis`` this coincides
    with :func:`pod_frto_adjoint`.

    ``discrete=True`` is only defined for a shared basis, where the discrete
    adjoint of the reduced forward solve exists.
    """
    if discrete:
        if adjoint_basis.modes.shape != state_basis.modes.shape or not np.array_equal(
                adjoint_basis.modes, state_basis.modes):
            raise ValueError("discrete FOTR adjoint requires adjoint_basis == state_basis")
        op = state_basis.modes.T @ (sys.A @ state_basis.modes)
        return _reduced_adjoint(state_basis.modes, state_basis.modes, sys, tg, a_p, True, op=op)
    return _reduced_adjoint(adjoint_basis.modes, state_basis.modes, sys, tg, a_p, discrete=False)


def pod_fotr_gradient(adjoint_basis: PodBasis, sys: FomSystem, u: np.ndarray, a_pa: np.ndarray) -> np.ndarray:
    return sys.mu * u + sys.B.T @ (adjoint_basis.modes @ a_pa)
