"""Single-frame shifted POD and its Galerkin reduced model.

The state is approximated as ``q(t) ~ T(z(t)) U a(t)`` where ``T(z)`` is the
periodic shift operator, ``U`` holds stationary (co-moving) modes and both
the amplitudes ``a`` and the shift ``z`` evolve in time. Testing the
residual against ``V = T(z) U`` and ``W a`` with ``W = T'(z) U`` gives

    [ M1       N a     ] [a']   [ A1 a + V^T B u         ]
    [ a^T N^T  a^T M2 a ] [z'] = [ a^T A2 a + a^T W^T B u ]

with ``M1 = V^T V``, ``M2 = W^T W``, ``N = V^T W``, ``A1 = V^T A V`` and
``A2 = W^T A V``. For one frame these five matrices do not depend on ``z``
(shift and advection operators are both circulant), so they are computed
once; ``V^T B`` and ``W^T B`` do depend on ``z`` and are tabulated.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy.linalg

from . import shift as _shift
from .fom import FomSystem, IntegrationDiverged, SpatialGrid, TimeGrid, cost
from .matio import read_matrix, write_matrix
from .pod import PodBasis

COND_LIMIT = 1e12
M1_PD_TOL = 1e-8


class NearDegenerateMassMatrix(FloatingPointError):
    """The reduced mass matrix is (numerically) singular."""

    def __init__(self, step: int, cond: float):
        self.step = step
        self.cond = cond
        super().__init__(f"reduced mass matrix near-degenerate at time step {step} (cond ~ {cond:.3g})")


class DegenerateBasis(ValueError):
    pass


# ---- decomposition ---------------------------------------------------------

@dataclass(frozen=True)
class SpodFrame:
    modes: np.ndarray
    singular_values: np.ndarray


@dataclass(frozen=True)
class SpodBasis:
    """Co-moving bases of all frames together with the shift tracks used to build them."""

    frames: tuple
    shifts: np.ndarray  # K x n

    @property
    def K(self) -> int:
        return len(self.frames)

    @property
    def r(self) -> int:
        return sum(f.modes.shape[1] for f in self.frames)

    @property
    def modes(self) -> np.ndarray:
        """Stationary modes of the single frame."""
        if self.K != 1:
            raise NotImplementedError("only single-frame bases are supported")
        return self.frames[0].modes


def spod_decompose_single_frame(snapshots: np.ndarray, shifts, p: int, grid: SpatialGrid) -> SpodBasis:
    """Move every snapshot back by its shift and keep ``p`` POD modes of the result."""
    Q = np.asarray(snapshots, dtype=float)
    z = np.asarray(shifts, dtype=float).reshape(-1)
    if z.shape[0] != Q.shape[1]:
        raise ValueError("one shift per snapshot column is required")
    if not 1 <= p <= min(Q.shape):
        raise ValueError(f"p={p} outside [1, {min(Q.shape)}]")
    co_moving = _shift.shift_columns(Q, -z, grid)
    U, s, _ = scipy.linalg.svd(co_moving, full_matrices=False, lapack_driver="gesdd")
    frame = SpodFrame(np.ascontiguousarray(U[:, :p]), s)
    return SpodBasis((frame,), z[None, :].copy())


def co_moving_snapshots(snapshots, shifts, grid) -> np.ndarray:
    return _shift.shift_columns(snapshots, -np.asarray(shifts, dtype=float).reshape(-1), grid)


# ---- Galerkin cache --------------------------------------------------------

@dataclass(frozen=True)
class CacheEval:
    """All reduced quantities at one shift value."""

    M1: np.ndarray
    M2: np.ndarray
    N: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    VTB: np.ndarray
    WTB: np.ndarray
    W2TB: np.ndarray  # d/dz of W^T B, needed by the adjoint


@dataclass(frozen=True)
class GalerkinCache:
    """Reduced matrices of a single-frame basis, tabulated over shift values.

    With ``n_samples`` set, ``tables[q]`` holds ``V^T B``, ``W^T B`` and
    ``(dW/dz)^T B`` at ``samples`` (uniform on one period) and values in
    between are interpolated linearly. With ``n_samples=None`` the cache is
    exact: ``tables`` is the circular cross-correlation of modes and control
    shapes, from which the quantities at any ``z`` follow by applying the
    Lagrange shift weights directly.

    ``mats`` maps names to arrays of shape ``(n_mat, r, r)`` with
    ``n_mat = 1`` for a constant cache and ``n_samples`` otherwise.
    """

    grid: SpatialGrid
    n_samples: int | None
    constant_matrices: bool
    mats: dict
    tables: tuple
    basis_hash: str = ""
    minv: np.ndarray = field(default=None, repr=False)

    @property
    def exact(self) -> bool:
        return self.n_samples is None

    @property
    def samples(self) -> np.ndarray | None:
        if self.exact:
            return None
        return np.arange(self.n_samples) * (self.grid.length / self.n_samples)

    @property
    def r(self) -> int:
        return self.mats["M1"].shape[1]

    @property
    def n_c(self) -> int:
        return self.tables[0].shape[2]

    def save(self, directory) -> None:
        """Write metadata plus one binary matrix file per quantity."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "n_samples": self.n_samples,
            "r": self.r,
            "n_c": self.n_c,
            "constant_matrices": self.constant_matrices,
            "grid_m": self.grid.m,
            "grid_length": self.grid.length,
            "grid_hash": grid_hash(self.grid),
            "basis_hash": self.basis_hash,
            "n_mat": int(self.mats["M1"].shape[0]),
            "n_tab": int(self.tables[0].shape[0]),
        }
        (d / "metadata.json").write_text(json.dumps(meta, indent=2))
        for name, M in self.mats.items():
            write_matrix(d / f"{name}.bin", M.reshape(M.shape[0], -1))
        for name, T in zip(TABLE_NAMES, self.tables):
            write_matrix(d / f"{name}.bin", T.reshape(T.shape[0], -1))

    @classmethod
    def load(cls, directory, grid: SpatialGrid | None = None) -> "GalerkinCache":
        d = Path(directory)
        meta = json.loads((d / "metadata.json").read_text())
        g = SpatialGrid(meta["grid_m"], meta["grid_length"])
        if grid is not None and grid_hash(grid) != meta["grid_hash"]:
            raise ValueError("cache was assembled on a different grid")
        r, n_c = meta["r"], meta["n_c"]
        mats = {k: read_matrix(d / f"{k}.bin").reshape(meta["n_mat"], r, r) for k in MAT_NAMES}
        tables = tuple(read_matrix(d / f"{k}.bin").reshape(meta["n_tab"], r, n_c) for k in TABLE_NAMES)
        return _finish_cache(g, meta["n_samples"], meta["constant_matrices"], mats, tables, meta["basis_hash"])


MAT_NAMES = ("M1", "M2", "N", "A1", "A2")
TABLE_NAMES = ("VTB", "WTB", "W2TB")


def grid_hash(grid: SpatialGrid) -> str:
    return hashlib.sha256(f"{grid.m}:{grid.length!r}".encode()).hexdigest()[:16]


def _basis_hash(U) -> str:
    return hashlib.sha256(np.ascontiguousarray(U).tobytes()).hexdigest()[:16]


def _matrices_at(U, sys: FomSystem, z: float | None):
    """Galerkin matrices at shift ``z``; ``None`` gives the shift-invariant set.

    The invariant set uses the identity for the shift and the centred
    derivative stencil, so ``N`` and ``A2`` are exactly skew and the reduced
    energy ``a^T M1 a`` is conserved by the uncontrolled dynamics.
    """
    grid = sys.grid
    if z is None:
        V = U
        W = _shift.centered_shift_derivative(U, grid)
    else:
        V = _shift.shift_array(U, z, grid)
        W = _shift.shift_array(U, z, grid, deriv=1)
    AV = sys.A @ V
    return {"M1": V.T @ V, "M2": W.T @ W, "N": V.T @ W, "A1": V.T @ AV, "A2": W.T @ AV}


def _cross_correlation(U, B):
    """``R[d, i, c] = sum_x U[x - d, i] B[x, c]`` (circular), for all lags ``d``."""
    m = U.shape[0]
    FU = np.fft.rfft(U, axis=0)
    FB = np.fft.rfft(B, axis=0)
    return np.fft.irfft(np.conj(FU)[:, :, None] * FB[:, None, :], n=m, axis=0)


def _tables_from_correlation(R, grid, z, deriv):
    """``(d^deriv T(z) U)^T B`` for a vector of shifts, from the correlation table."""
    k, s = _shift.split_shift(z, grid)
    w = _shift.lagrange_weights(s, deriv) * (-1.0 / grid.dx) ** deriv  # ns x 6
    idx = (k[:, None] + 1 - _shift.STENCIL[None, :]) % grid.m          # ns x 6
    return np.einsum("st,stic->sic", w, R[idx])


def _chunks(n, parts):
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [(edges[i], edges[i + 1]) for i in range(parts) if edges[i + 1] > edges[i]]


def assemble_galerkin_cache(basis: SpodBasis, sys: FomSystem, n_samples: int | None = 800,
                            constant_matrices: bool = True, threads: int = 1,
                            pd_tol: float = M1_PD_TOL) -> GalerkinCache:
    """Precompute reduced matrices for a single-frame basis.

    Samples are independent and are split into contiguous chunks that are
    filled by ``threads`` workers. ``n_samples=None`` builds an exact cache.
    """
    if basis.K != 1:
        raise NotImplementedError("cache assembly is implemented for one frame")
    U = basis.modes
    grid = sys.grid
    R = _cross_correlation(U, sys.B)
    if n_samples is None:
        tables = (R, R, R)
        zs = np.zeros(1)
    else:
        if n_samples < 1:
            raise ValueError("n_samples must be positive")
        zs = np.arange(n_samples) * (grid.length / n_samples)
        tables = tuple(np.empty((n_samples,) + R.shape[1:]) for _ in range(3))

        def fill(lo, hi):
            for q in range(3):
                tables[q][lo:hi] = _tables_from_correlation(R, grid, zs[lo:hi], q)

        _run_chunks(fill, len(zs), threads)

    if constant_matrices or n_samples is None:
        mats = {k: v[None] for k, v in _matrices_at(U, sys, None).items()}
        if not constant_matrices:
            raise ValueError("an exact cache always uses constant matrices")
    else:
        mats = {k: np.empty((len(zs),) + (U.shape[1],) * 2) for k in MAT_NAMES}

        def fill_mats(lo, hi):
            for i in range(lo, hi):
                for k, v in _matrices_at(U, sys, zs[i]).items():
                    mats[k][i] = v

        _run_chunks(fill_mats, len(zs), threads)

    for i, M1 in enumerate(mats["M1"]):
        lam_min = np.linalg.eigvalsh(0.5 * (M1 + M1.T))[0]
        if lam_min <= pd_tol:
            raise DegenerateBasis(f"M1 not positive definite at sample {i} (min eigenvalue {lam_min:.3g})")
    return _finish_cache(grid, n_samples, constant_matrices or n_samples is None, mats, tables, _basis_hash(U))


def _run_chunks(fn, n, threads):
    chunks = _chunks(n, threads)
    if threads <= 1 or len(chunks) == 1:
        for lo, hi in chunks:
            fn(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=threads) as ex:
        for f in [ex.submit(fn, lo, hi) for lo, hi in chunks]:
            f.result()


def _finish_cache(grid, n_samples, constant, mats, tables, basis_hash):
    mats = {k: np.ascontiguousarray(v, dtype=float) for k, v in mats.items()}
    tables = tuple(np.ascontiguousarray(t, dtype=float) for t in tables)
    minv = np.linalg.inv(mats["M1"][0]) if constant else None
    return GalerkinCache(grid, n_samples, constant, mats, tables, basis_hash, minv)


def _interp_position(cache: GalerkinCache, z: float):
    n = cache.n_samples
    pos = (float(z) % cache.grid.length) / cache.grid.length * n
    i = int(np.floor(pos))
    f = pos - i
    i %= n
    return i, (i + 1) % n, f


def interpolate_cache(cache: GalerkinCache, z: float) -> CacheEval:
    """Reduced quantities at shift ``z``: linear interpolation between samples (or exact)."""
    if cache.exact:
        R = cache.tables[0]
        tabs = [_tables_from_correlation(R, cache.grid, np.array([z]), q)[0] for q in range(3)]
    else:
        i, j, f = _interp_position(cache, z)
        tabs = [(1 - f) * T[i] + f * T[j] for T in cache.tables]
    if cache.constant_matrices:
        mats = {k: v[0] for k, v in cache.mats.items()}
    else:
        i, j, f = _interp_position(cache, z)
        mats = {k: (1 - f) * v[i] + f * v[j] for k, v in cache.mats.items()}
    return CacheEval(**mats, VTB=tabs[0], WTB=tabs[1], W2TB=tabs[2])


# ---- reduced dynamics (compiled) ---------------------------------------------

def _padded_coeffs():
    C = np.zeros((3, 6, 6))
    for d in range(3):
        c = _shift._COEFFS[d]
        C[d, :, 6 - c.shape[1]:] = c
    return C


_PCOEFFS = _padded_coeffs()


@numba.njit(cache=True)
def _stencil(z, exact, dx, m, length, ns, coeffs, deriv, idx, w):
    """Table rows and weights that combine into a tabulated quantity at ``z``."""
    if exact:
        zeta = (z / dx) % m
        near = np.floor(zeta + 0.5)
        if abs(zeta - near) < 1e-10:
            zeta = near
        kf = np.floor(zeta)
        s = 1.0 - (zeta - kf)
        k = int(kf) % m
        scale = (-1.0 / dx) ** deriv
        for t in range(6):
            val = 0.0
            for p in range(6):
                val = val * s + coeffs[deriv, t, p]
            w[t] = val * scale
            idx[t] = (k + 1 - (t - 2)) % m
        return 6
    pos = (z % length) / length * ns
    i = int(np.floor(pos))
    f = pos - i
    i = i % ns
    idx[0] = i
    idx[1] = (i + 1) % ns
    w[0] = 1.0 - f
    w[1] = f
    return 2


@numba.njit(cache=True)
def _table_apply(tab, idx, w, cnt, u, out):
    r, nc = tab.shape[1], tab.shape[2]
    for i in range(r):
        out[i] = 0.0
    for c in range(cnt):
        T = tab[idx[c]]
        wc = w[c]
        for i in range(r):
            acc = 0.0
            for l in range(nc):
                acc += T[i, l] * u[l]
            out[i] += wc * acc


@numba.njit(cache=True)
def _rhs(x, u, M1, M1inv, N, M2, A1, A2, tabG, tabH, exact, dx, m, length, ns, coeffs,
         freeze, out, work):
    """Evaluate ``[a'; z']`` into ``out``; returns the 1-norm condition number of the mass matrix."""
    r = M1inv.shape[0]
    a = x[:r]
    z = x[r]
    idx = np.empty(6, np.int64)
    w = np.empty(6)
    Gu = work[0]
    Hu = work[1]
    f1 = work[2]
    Na = work[3]
    y = work[4]
    x1 = work[5]
    cnt = _stencil(z, exact, dx, m, length, ns, coeffs, 0, idx, w)
    _table_apply(tabG, idx, w, cnt, u, Gu)
    for i in range(r):
        acc = Gu[i]
        for j in range(r):
            acc += A1[i, j] * a[j]
        f1[i] = acc
    for i in range(r):
        acc = 0.0
        for j in range(r):
            acc += M1inv[i, j] * f1[j]
        x1[i] = acc
    if freeze:
        for i in range(r):
            out[i] = x1[i]
        out[r] = 0.0
        return 1.0
    cnt = _stencil(z, exact, dx, m, length, ns, coeffs, 1 if exact else 0, idx, w)
    _table_apply(tabH, idx, w, cnt, u, Hu)
    f2 = 0.0
    aM2a = 0.0
    for i in range(r):
        s1 = 0.0
        s2 = 0.0
        s3 = 0.0
        for j in range(r):
            s1 += A2[i, j] * a[j]
            s2 += M2[i, j] * a[j]
            s3 += N[i, j] * a[j]
        f2 += a[i] * (s1 + Hu[i])
        aM2a += a[i] * s2
        Na[i] = s3
    S = aM2a
    rhs2 = f2
    for i in range(r):
        acc = 0.0
        for j in range(r):
            acc += M1inv[i, j] * Na[j]
        y[i] = acc
    for i in range(r):
        S -= Na[i] * y[i]
        rhs2 -= Na[i] * x1[i]
    if not abs(S) > 0.0:
        return np.inf
    zdot = rhs2 / S
    for i in range(r):
        out[i] = x1[i] - y[i] * zdot
    out[r] = zdot
    # ||M||_1 ||M^-1||_1, the inverse taken from the Schur-complement block formula
    nM = abs(aM2a)
    nMi = 1.0 / abs(S)
    for i in range(r):
        nM += abs(Na[i])
        nMi += abs(y[i] / S)
    for j in range(r):
        c = abs(Na[j])
        ci = abs(y[j] / S)
        for i in range(r):
            c += abs(M1[i, j])
            ci += abs(M1inv[i, j] + y[i] * y[j] / S)
        nM = max(nM, c)
        nMi = max(nMi, ci)
    return nM * nMi


@numba.njit(cache=True)
def _integrate(x0, U, h, M1, M1inv, N, M2, A1, A2, tabG, tabH, exact, dx, m, length, ns, coeffs,
               freeze, cond_limit, X, stages, rates, conds):
    """Classical RK4; control at half steps is the mean of neighbouring nodes.

    Returns ``(step, kind)`` with kind 0 = ok, 1 = near-degenerate, 2 = non-finite.
    """
    d = x0.shape[0]
    r = d - 1
    n = U.shape[1]
    work = np.empty((6, r))
    x = x0.copy()
    um = np.empty(U.shape[0])
    xs = np.empty(d)
    k = np.empty((4, d))
    for i in range(d):
        X[i, 0] = x[i]
    for j in range(n - 1):
        for l in range(U.shape[0]):
            um[l] = 0.5 * (U[l, j] + U[l, j + 1])
        for st in range(4):
            if st == 0:
                for i in range(d):
                    xs[i] = x[i]
            else:
                c = h if st == 3 else 0.5 * h
                for i in range(d):
                    xs[i] = x[i] + c * k[st - 1, i]
            if st == 0:
                uu = U[:, j].copy()
            elif st == 3:
                uu = U[:, j + 1].copy()
            else:
                uu = um
            cond = _rhs(xs, uu, M1, M1inv, N, M2, A1, A2, tabG, tabH, exact, dx, m, length, ns,
                        coeffs, freeze, k[st], work)
            conds[j, st] = cond
            if not cond <= cond_limit:
                return j, 1
            for i in range(d):
                stages[j, st, i] = xs[i]
                rates[j, st, i] = k[st, i]
        for i in range(d):
            x[i] += h / 6.0 * (k[0, i] + 2.0 * k[1, i] + 2.0 * k[2, i] + k[3, i])
            X[i, j + 1] = x[i]
            if not np.isfinite(x[i]):
                return j + 1, 2
    return -1, 0


# ---- Python-level reduced model ----------------------------------------------

@dataclass(frozen=True)
class ReducedTrajectory:
    """Amplitudes ``a`` (r x n) and shifts ``z`` (K x n) of an sPOD-G solve.

    ``stages`` / ``rates`` keep the RK4 stage states and stage derivatives of
    every step (shape ``(n-1, 4, r+K)``); ``node_rates`` holds ``[a'; z']`` at
    the time nodes.
    """

    amplitudes: np.ndarray
    shifts: np.ndarray
    stages: np.ndarray | None = None
    rates: np.ndarray | None = None
    node_rates: np.ndarray | None = None
    frozen: bool = False

    def blockdiag_amplitudes(self, j: int) -> np.ndarray:
        """``D(a)`` at node ``j``: an r x K block-diagonal selection (K = 1 here)."""
        return self.amplitudes[:, j:j + 1]


class SpodDynamics:
    """Right-hand side and Jacobians of the single-frame sPOD-G model."""

    def __init__(self, cache: GalerkinCache, freeze_shift: bool = False):
        if not cache.constant_matrices:
            raise NotImplementedError("the reduced solve needs a constant-matrix cache")
        self.cache = cache
        self.freeze = bool(freeze_shift)
        g = cache.grid
        c = cache.mats
        self._mats = (c["M1"][0], cache.minv, c["N"][0], c["M2"][0], c["A1"][0], c["A2"][0])
        tabG, tabH, tabH2 = cache.tables
        self._tabs = (tabG, tabH, tabH2)
        self._geom = (cache.exact, g.dx, g.m, g.length, cache.n_samples or 1, _PCOEFFS)
        self.r = c["M1"].shape[1]

    # tabulated quantities at one shift -------------------------------------
    def _tab(self, q, z):
        exact, dx, m, length, ns, coeffs = self._geom
        idx = np.empty(6, np.int64)
        w = np.empty(6)
        cnt = _stencil(float(z), exact, dx, m, length, ns, coeffs, q if exact else 0, idx, w)
        T = self._tabs[q]
        return np.einsum("c,cij->ij", w[:cnt], T[idx[:cnt]])

    def G(self, z):
        """``V(z)^T B``."""
        return self._tab(0, z)

    def H(self, z):
        """``W(z)^T B``."""
        return self._tab(1, z)

    def dH(self, z):
        """``d/dz W(z)^T B``."""
        return self._tab(2, z)

    def rhs(self, x, u) -> tuple[np.ndarray, float]:
        out = np.empty(self.r + 1)
        cond = _rhs(np.asarray(x, float), np.asarray(u, float), *self._mats, self._tabs[0], self._tabs[1],
                    *self._geom, self.freeze, out, np.empty((6, self.r)))
        return out, cond

    def mass(self, x):
        M1, _, N, M2, _, _ = self._mats
        a = x[:self.r]
        r = self.r
        M = np.empty((r + 1, r + 1))
        M[:r, :r] = M1
        if self.freeze:
            M[:r, r] = M[r, :r] = 0.0
            M[r, r] = 1.0
            return M
        M[:r, r] = N @ a
        M[r, :r] = N @ a
        M[r, r] = a @ M2 @ a
        return M

    def residual_jacobian(self, x, u):
        """``dF/dx`` and ``dF/du`` of the right-hand side ``F`` (before the mass solve)."""
        _, _, N, M2, A1, A2 = self._mats
        r = self.r
        a, z = x[:r], x[r]
        G, H = self.G(z), self.H(z)
        Fx = np.zeros((r + 1, r + 1))
        Fu = np.zeros((r + 1, G.shape[1]))
        Fx[:r, :r] = A1
        Fu[:r] = G
        if self.freeze:
            return Fx, Fu
        Hu = H @ u
        Fx[:r, r] = Hu
        Fx[r, :r] = a @ (A2 + A2.T) + Hu
        Fx[r, r] = a @ (self.dH(z) @ u)
        Fu[r] = a @ H
        return Fx, Fu

    def mass_derivative_term(self, x, rate):
        """``P[:, l] = (dM/dx_l) rate``."""
        _, _, N, M2, _, _ = self._mats
        r = self.r
        P = np.zeros((r + 1, r + 1))
        if self.freeze:
            return P
        a = x[:r]
        adot, zdot = rate[:r], rate[r]
        P[:r, :r] = zdot * N
        P[r, :r] = adot @ N + 2.0 * zdot * (a @ M2)
        return P

    def jacobians(self, x, u):
        """``df/dx`` and ``df/du`` of the explicit form ``x' = f(x, u)``."""
        rate, _ = self.rhs(x, u)
        Fx, Fu = self.residual_jacobian(x, u)
        P = self.mass_derivative_term(x, rate)
        M = self.mass(x)
        lu = scipy.linalg.lu_factor(M)
        return scipy.linalg.lu_solve(lu, Fx - P), scipy.linalg.lu_solve(lu, Fu), lu


def initial_amplitudes(basis: SpodBasis, sys: FomSystem, cache: GalerkinCache, z0: float) -> np.ndarray:
    """Solve ``M1(z0) a = V(z0)^T q0``."""
    V = _shift.shift_array(basis.modes, z0, sys.grid)
    return np.linalg.solve(cache.mats["M1"][0], V.T @ sys.q0)


def solve_spod_rom(cache: GalerkinCache, basis: SpodBasis, sys: FomSystem, tg: TimeGrid, u: np.ndarray,
                   z0: float = 0.0, freeze_shift: bool = False, cond_limit: float = COND_LIMIT,
                   dynamics: SpodDynamics | None = None) -> ReducedTrajectory:
    """RK4 solve of the sPOD-G model; every stage solves the mass-matrix system.

    ``freeze_shift`` pins ``z`` to ``z0`` and evolves only the amplitudes.
    """
    u = np.ascontiguousarray(u, dtype=float)
    if u.shape != (sys.n_c, tg.n):
        raise ValueError(f"control must have shape {(sys.n_c, tg.n)}")
    dyn = dynamics or SpodDynamics(cache, freeze_shift)
    r = cache.r
    x0 = np.append(initial_amplitudes(basis, sys, cache, z0), z0)
    n = tg.n
    X = np.empty((r + 1, n))
    stages = np.empty((n - 1, 4, r + 1))
    rates = np.empty((n - 1, 4, r + 1))
    conds = np.empty((n - 1, 4))
    step, kind = _integrate(x0, u, tg.dt, *dyn._mats, dyn._tabs[0], dyn._tabs[1], *dyn._geom,
                            dyn.freeze, cond_limit, X, stages, rates, conds)
    if kind == 1:
        raise NearDegenerateMassMatrix(step, float(np.max(conds[step][np.isfinite(conds[step])], initial=np.inf)))
    if kind == 2:
        raise IntegrationDiverged(step, "sPOD-G state")
    last, _ = dyn.rhs(X[:, -1], u[:, -1])
    node_rates = np.column_stack([rates[:, 0, :].T, last])
    return ReducedTrajectory(X[:r], X[r:], stages, rates, node_rates, dyn.freeze)


def reconstruct(basis: SpodBasis, traj: ReducedTrajectory, grid: SpatialGrid) -> np.ndarray:
    """``q(t_j) = T(z_j) U a_j`` for every node."""
    return _shift.shift_columns(basis.modes @ traj.amplitudes, traj.shifts[0], grid)


def spod_cost(basis: SpodBasis, sys: FomSystem, tg: TimeGrid, traj: ReducedTrajectory, u: np.ndarray) -> float:
    return cost(sys, tg, reconstruct(basis, traj, sys.grid), u)


def as_pod_basis(basis: SpodBasis) -> PodBasis:
    f = basis.frames[0]
    return PodBasis(f.modes, f.singular_values)
