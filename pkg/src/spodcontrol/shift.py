"""Discrete periodic translation by fractional distances, and shift estimation.

A shift by ``z`` maps grid samples of ``f`` to samples of ``f(x - z)``. The
distance is split into whole cells and a fractional remainder, and the
remainder is handled by degree-5 Lagrange interpolation on the six nodes
nearest to the target point (three on each side).
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .fom import SpatialGrid

# node offsets relative to the grid point just left of the target
STENCIL = np.arange(-2, 4)
# fractional positions closer than this (in cells) to a node snap onto it
SNAP_CELLS = 1e-10


def _lagrange_coefficients():
    """Polynomial coefficients (highest power first) of the six basis polynomials."""
    coeffs = []
    for t, o in enumerate(STENCIL):
        others = np.delete(STENCIL, t)
        c = np.poly(others.astype(float)) / np.prod(o - others)
        coeffs.append(c)
    return np.array(coeffs)


_COEFFS = [_lagrange_coefficients()]
for _ in range(2):
    _COEFFS.append(np.array([np.polyder(c) for c in _COEFFS[-1]]))


def lagrange_weights(s, deriv: int = 0) -> np.ndarray:
    """Weights (or their ``deriv``-th derivative in ``s``) for fractional positions ``s``.

    Returns an array of shape ``s.shape + (6,)``.
    """
    s = np.asarray(s, dtype=float)
    C = _COEFFS[deriv]
    powers = s[..., None] ** np.arange(C.shape[1] - 1, -1, -1)
    w = powers @ C.T
    if deriv == 0:
        # exact unit weights on the nodes themselves
        for node in (0, 1):
            hit = s == node
            if np.any(hit):
                w[hit] = (STENCIL == node).astype(float)
    return w


def split_shift(z, grid: SpatialGrid):
    """Cells ``k`` and fractional position ``s`` in (0, 1] of a shift ``z`` (any real).

    The shifted sample at node ``i`` lies between nodes ``i-k-1`` and ``i-k``,
    a fraction ``s`` of a cell to the right of ``i-k-1``.
    """
    zeta = np.mod(np.asarray(z, dtype=float) / grid.dx, grid.m)
    near = np.rint(zeta)
    zeta = np.where(np.abs(zeta - near) < SNAP_CELLS, near, zeta)
    k = np.floor(zeta)
    s = 1.0 - (zeta - k)
    return k.astype(np.int64) % grid.m, s


def _scale(grid, deriv):
    # ds/dz = -1/dx
    return (-1.0 / grid.dx) ** deriv


@dataclass(frozen=True)
class ShiftOperator:
    """Sparse periodic translation by ``shift`` metres (six entries per row)."""

    shift: float
    matrix: sp.csr_matrix

    def __matmul__(self, other):
        return self.matrix @ other


def _shift_matrix(grid: SpatialGrid, z: float, deriv: int) -> sp.csr_matrix:
    m = grid.m
    k, s = split_shift(z, grid)
    w = lagrange_weights(s, deriv) * _scale(grid, deriv)
    rows = np.repeat(np.arange(m), len(STENCIL))
    cols = ((np.arange(m)[:, None] - k - 1 + STENCIL[None, :]) % m).ravel()
    M = sp.csr_matrix((np.tile(w, m), (rows, cols)), shape=(m, m))
    M.eliminate_zeros()
    return M


def build_shift_operator(grid: SpatialGrid, z: float) -> ShiftOperator:
    """Operator mapping samples of ``f`` to samples of ``f(. - z)``; exact for whole cells."""
    return ShiftOperator(float(z), _shift_matrix(grid, z, 0))


def build_shift_derivative_operator(grid: SpatialGrid, z: float) -> sp.csr_matrix:
    """``d/dz`` of the shift operator; applied to ``f`` it approximates ``-f'(. - z)``."""
    return _shift_matrix(grid, z, 1)


def build_shift_second_derivative_operator(grid: SpatialGrid, z: float) -> sp.csr_matrix:
    """``d^2/dz^2`` of the shift operator; approximates ``f''(. - z)``."""
    return _shift_matrix(grid, z, 2)


def shift_array(F: np.ndarray, z: float, grid: SpatialGrid, deriv: int = 0) -> np.ndarray:
    """Apply the (derivative) shift operator for a single ``z`` to the rows of ``F``.

    Cheaper than building the sparse matrix for a few columns.
    """
    k, s = split_shift(z, grid)
    return _apply_stencil(F, int(k), float(s), deriv, grid)


def _apply_stencil(F, k, s, deriv, grid):
    w = lagrange_weights(s, deriv) * _scale(grid, deriv)
    out = np.zeros_like(F, dtype=float)
    for t, o in enumerate(STENCIL):
        if w[t] != 0.0:
            # roll(F, r)[i] = F[i - r]
            out += w[t] * np.roll(F, int(k + 1 - o), axis=0)
    return out


def centered_shift_derivative(F: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Mean of the one-sided limits of ``d/dz`` of the shift at ``z = 0``, applied to ``F``.

    The derivative of the piecewise-polynomial shift jumps at whole cells;
    the average of both limits is a centred, antisymmetric difference stencil.
    """
    right = _apply_stencil(F, 0, 1.0, 1, grid)
    left = _apply_stencil(F, -1, 0.0, 1, grid)
    return 0.5 * (right + left)


@numba.njit(cache=True, parallel=False)
def _gather_columns(F, k, W, offsets, transpose, out):
    m, n = F.shape
    for j in range(n):
        for i in range(m):
            acc = 0.0
            for t in range(offsets.size):
                if transpose:
                    idx = (i + k[j] + 1 - offsets[t]) % m
                else:
                    idx = (i - k[j] - 1 + offsets[t]) % m
                acc += W[j, t] * F[idx, j]
            out[i, j] = acc


def shift_columns(F: np.ndarray, z, grid: SpatialGrid, deriv: int = 0, transpose: bool = False) -> np.ndarray:
    """Shift column ``j`` of ``F`` by ``z[j]``.

    With ``transpose=True`` the transpose of each (derivative) shift matrix is
    applied instead, which is the exact adjoint of the forward map.
    """
    F = np.asarray(F, dtype=float)
    m, n = F.shape
    z = np.broadcast_to(np.asarray(z, dtype=float), (n,))
    k, s = split_shift(z, grid)
    W = np.ascontiguousarray(lagrange_weights(s, deriv) * _scale(grid, deriv))  # n x 6
    out = np.empty((m, n))
    _gather_columns(F, np.ascontiguousarray(k, dtype=np.int64), W, STENCIL.astype(np.int64), transpose, out)
    return out


# ---- shift estimation ------------------------------------------------------

def _peak_offset(cm, c0, cp):
    """Vertex of the parabola through three equally spaced samples."""
    den = cm - 2 * c0 + cp
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den < 0, 0.5 * (cm - cp) / den, 0.0)
    return np.clip(off, -0.5, 0.5)


def _newton_polish(spec, tau, iters=4):
    """Refine maxima of the trigonometric interpolant of each correlation column."""
    m = spec.shape[0]
    freq = np.fft.fftfreq(m, d=1.0 / m)
    if m % 2 == 0:
        spec = spec.copy()
        spec[m // 2] = 0.0  # drop the Nyquist term so the interpolant stays real
    omega = 2j * np.pi * freq / m
    start = tau.copy()
    for _ in range(iters):
        phase = np.exp(omega[:, None] * tau[None, :])
        d1 = np.real(np.sum(omega[:, None] * spec * phase, axis=0)) / m
        d2 = np.real(np.sum(omega[:, None] ** 2 * spec * phase, axis=0)) / m
        step = np.where(d2 < 0, -d1 / np.where(d2 < 0, d2, 1.0), 0.0)
        tau = tau + step
    # guard against wandering off to a different local maximum
    return np.where(np.abs(tau - start) <= 1.0, tau, start)


def estimate_shifts(snapshots: np.ndarray, grid: SpatialGrid, polish: bool = True) -> np.ndarray:
    """Unwrapped transport distance of every snapshot relative to the first one.

    The lag maximising the circular cross-correlation with column 0 is located
    on the grid and refined to sub-cell accuracy by a parabola through the peak
    and its neighbours. ``polish`` further sharpens this with a few Newton steps
    on the band-limited interpolant of the correlation. Consecutive values are
    unwrapped so that no jump exceeds half the domain; ``z[0] = 0``.
    """
    Q = np.asarray(snapshots, dtype=float)
    m, n = Q.shape
    scale = np.abs(Q).max()
    flat = np.ptp(Q, axis=0) <= 1e-14 * scale if scale > 0 else np.ones(n, bool)
    if flat.any():
        raise ValueError(f"snapshot column {int(np.argmax(flat))} is flat; no correlation peak")
    spec = np.fft.fft(Q, axis=0) * np.conj(np.fft.fft(Q[:, :1], axis=0))
    corr = np.real(np.fft.ifft(spec, axis=0))
    d = np.argmax(corr, axis=0)
    cols = np.arange(n)
    off = _peak_offset(corr[(d - 1) % m, cols], corr[d, cols], corr[(d + 1) % m, cols])
    lag = d + off
    if polish:
        lag = _newton_polish(spec, lag)
    lag = lag - lag[0]
    # unwrap: each step moves by less than half the period
    steps = np.diff(lag)
    steps = (steps + m / 2) % m - m / 2
    z = np.concatenate([[0.0], np.cumsum(steps)])
    return z * grid.dx
