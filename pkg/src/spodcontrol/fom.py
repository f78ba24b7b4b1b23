"""Full-order model of the controlled 1D periodic advection equation.

The semi-discrete system is ``q' = A q + B u`` on a uniform periodic grid,
with a quadratic tracking cost weighted by the trapezoidal matrix ``C``.
State and adjoint are both integrated with classical RK4; control and
source values at half steps are linearly interpolated between nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

# 6th-order central first-derivative weights for offsets -3..3 (times 1/dx)
FD6_OFFSETS = np.arange(-3, 4)
FD6_WEIGHTS = np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60])

MIN_GRID_POINTS = 8


class IntegrationDiverged(FloatingPointError):
    """Raised when a time integration produces non-finite values."""

    def __init__(self, step: int, what: str = "state"):
        self.step = step
        super().__init__(f"{what} integration diverged at time step {step}")


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid with nodes ``x_i = i*dx`` for ``i = 1..m``."""

    m: int
    length: float

    def __post_init__(self):
        if self.m < MIN_GRID_POINTS:
            raise ValueError(f"need at least {MIN_GRID_POINTS} grid points, got m={self.m}")
        if not self.length > 0:
            raise ValueError("domain length must be positive")

    @property
    def dx(self) -> float:
        return self.length / self.m

    @property
    def x(self) -> np.ndarray:
        return np.arange(1, self.m + 1) * self.dx

    def trapezoid_weights(self) -> np.ndarray:
        """Diagonal of ``C``: sqrt(dx) inside, sqrt(dx/2) at both ends."""
        c = np.full(self.m, np.sqrt(self.dx))
        c[0] = c[-1] = np.sqrt(self.dx) / np.sqrt(2.0)
        return c


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time nodes ``t_j = j*dt`` for ``j = 0..n-1``; ``t_f = n*dt``."""

    n: int
    dt: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two time nodes")
        if not self.dt > 0:
            raise ValueError("time step must be positive")

    @classmethod
    def from_cfl(cls, t_f: float, cfl: float, dx: float, c: float = 1.0) -> "TimeGrid":
        dt = cfl * dx / c
        n = int(round(t_f / dt))
        # snap dt so that n*dt reproduces t_f
        return cls(n=n, dt=t_f / n)

    @property
    def t_f(self) -> float:
        return self.n * self.dt

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights on the time nodes."""
        w = np.full(self.n, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


def build_advection_operator(grid: SpatialGrid, v: float) -> sp.csr_matrix:
    """Periodic 6th-order central discretisation of ``-v d/dx``.

    The result is circulant with zero row and column sums.
    """
    m = grid.m
    if m < MIN_GRID_POINTS:
        raise ValueError(f"m={m} too small for the 7-point stencil")
    rows = np.repeat(np.arange(m), len(FD6_OFFSETS))
    cols = (rows.reshape(m, -1) + FD6_OFFSETS).ravel() % m
    vals = np.tile(-v * FD6_WEIGHTS / grid.dx, m)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
    A.eliminate_zeros()
    return A


def build_control_operator(grid: SpatialGrid, n_c: int) -> np.ndarray:
    """Gaussian control shapes ``exp(-4 (x - L(k+1)/n_c)^2)``, k = 1..n_c.

    Shapes are evaluated literally on the grid (not wrapped), so far tails
    underflow to exactly zero.
    """
    if n_c < 1:
        raise ValueError("need at least one control")
    k = np.arange(1, n_c + 1)
    centers = grid.length * (k + 1) / n_c
    return np.exp(-4.0 * (grid.x[:, None] - centers[None, :]) ** 2)


@dataclass(frozen=True)
class CirculantOperator:
    """Real circulant matrix stored by its eigenvalues on the ``rfft`` modes."""

    symbol: np.ndarray
    m: int

    @classmethod
    def from_matrix(cls, A, rtol: float = 1e-13) -> "CirculantOperator | None":
        """Spectral form of ``A``, or ``None`` if ``A`` is not circulant."""
        A = sp.csr_matrix(A)
        m = A.shape[0]
        coo = A.tocoo()
        first = A[:, 0].toarray().ravel()
        expected = first[(coo.row - coo.col) % m]
        scale = np.abs(first).max()
        if scale == 0.0:
            return None
        if A.shape != (m, m) or coo.nnz != m * np.count_nonzero(first) or not np.allclose(
                coo.data, expected, rtol=0, atol=rtol * scale):
            return None
        return cls(np.fft.rfft(first), m)

    @property
    def T(self) -> "CirculantOperator":
        return CirculantOperator(np.conj(self.symbol), self.m)

    def __matmul__(self, X):
        X = np.asarray(X, dtype=float)
        sym = self.symbol if X.ndim == 1 else self.symbol[:, None]
        return np.fft.irfft(sym * np.fft.rfft(X, axis=0), n=self.m, axis=0)


@dataclass(frozen=True)
class FomSystem:
    """Operators and data of the full-order control problem.

    ``c_diag`` holds the diagonal of ``C``; ``q_d`` is the target trajectory
    sampled on the time grid (m x n).
    """

    grid: SpatialGrid
    A: sp.csr_matrix
    B: np.ndarray
    q0: np.ndarray
    q_d: np.ndarray
    mu: float
    v: float
    c_diag: np.ndarray = field(default=None)
    AT: sp.csr_matrix = field(default=None)
    spectral: CirculantOperator | None = field(default=None, repr=False)

    def __post_init__(self):
        m = self.grid.m
        if self.A.shape != (m, m) or self.B.shape[0] != m or self.q0.shape != (m,):
            raise ValueError("operator shapes do not match the grid")
        if self.q_d.shape[0] != m:
            raise ValueError("target must have one row per grid point")
        if not self.mu > 0:
            raise ValueError("regularisation mu must be positive")
        if self.c_diag is None:
            object.__setattr__(self, "c_diag", self.grid.trapezoid_weights())
        if self.AT is None:
            object.__setattr__(self, "AT", self.A.T.tocsr())
        if self.spectral is None:
            object.__setattr__(self, "spectral", CirculantOperator.from_matrix(self.A))

    @property
    def propagation_operator(self):
        """``A`` in the fastest available form (spectral when circulant)."""
        return self.spectral if self.spectral is not None else self.A

    @property
    def propagation_operator_T(self):
        return self.spectral.T if self.spectral is not None else self.AT

    @classmethod
    def build(cls, grid, v, n_c, q0, q_d, mu) -> "FomSystem":
        return cls(
            grid=grid,
            A=build_advection_operator(grid, v),
            B=build_control_operator(grid, n_c),
            q0=np.asarray(q0, dtype=float),
            q_d=np.asarray(q_d, dtype=float),
            mu=float(mu),
            v=float(v),
        )

    @property
    def n_c(self) -> int:
        return self.B.shape[1]

    @property
    def CTC(self) -> np.ndarray:
        """Diagonal of ``C^T C`` as a vector."""
        return self.c_diag ** 2


def _matpow_terms(op, X, k):
    out = [X]
    for _ in range(k):
        out.append(op @ out[-1])
    return out


def rk4_propagator(op, h: float):
    """One-step RK4 amplification ``I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24``."""
    if sp.issparse(op):
        eye = sp.identity(op.shape[0], format="csr")
    else:
        eye = np.eye(op.shape[0])
    hA = h * op
    R = eye + hA
    term = hA
    for k in (2, 3, 4):
        term = term @ hA / k
        R = R + term
    return R.tocsr() if sp.issparse(R) else R


@numba.njit(cache=True)
def _csr_recurrence(indptr, indices, data, G, y0, Y):
    """``Y[0] = y0``, ``Y[j + 1] = R Y[j] + G[j]`` for a CSR matrix ``R`` (rows of ``Y`` are states)."""
    m = y0.shape[0]
    Y[0] = y0
    for j in range(G.shape[0]):
        prev = Y[j]
        nxt = Y[j + 1]
        g = G[j]
        for i in range(m):
            acc = g[i]
            for p in range(indptr[i], indptr[i + 1]):
                acc += data[p] * prev[indices[p]]
            nxt[i] = acc


def _sweep(R, G, y0):
    """Run the affine recurrence with propagator ``R``; ``G`` holds one increment per row."""
    n = G.shape[0] + 1
    Y = np.empty((n, y0.shape[0]))
    if sp.issparse(R):
        R = R.tocsr()
        _csr_recurrence(R.indptr.astype(np.int64), R.indices.astype(np.int64), R.data.astype(float),
                        np.ascontiguousarray(G, dtype=float), np.asarray(y0, dtype=float), Y)
    else:
        Y[0] = y0
        for j in range(n - 1):
            Y[j + 1] = R @ Y[j] + G[j]
    return Y


def rk4_linear(op, forcing: np.ndarray, h: float, x0: np.ndarray, what: str = "state") -> np.ndarray:
    """Integrate ``x' = op x + f(t)`` with RK4 over uniformly spaced nodes.

    ``forcing`` holds f at the nodes (one column per node); midpoint values
    are the average of neighbouring columns. This is stage-by-stage RK4
    rewritten for a time-invariant operator: the forcing contribution of
    every step is precomputed in bulk and the sweep is one matvec per step.
    """
    n = forcing.shape[1]
    X = np.empty((x0.shape[0], n))
    X[:, 0] = x0
    if n == 1:
        return X
    if isinstance(op, CirculantOperator):
        return _rk4_linear_spectral(op, forcing, h, x0, what)
    F0 = forcing[:, :-1]
    F1 = forcing[:, 1:]
    Fm = 0.5 * (F0 + F1)
    a0 = _matpow_terms(op, F0, 3)
    am = _matpow_terms(op, Fm, 2)
    G = (h / 6) * (a0[0] + 4 * am[0] + F1)
    G += (h**2 / 6) * (a0[1] + 2 * am[1])
    G += (h**3 / 12) * (a0[2] + am[2])
    G += (h**4 / 24) * a0[3]
    G = np.asarray(G)
    R = rk4_propagator(op, h)
    with np.errstate(over="ignore", invalid="ignore"):
        X = np.ascontiguousarray(_sweep(R, G.T, np.asarray(x0, dtype=float)).T)
    if not np.isfinite(X).all():
        bad = int(np.argmax(~np.isfinite(X).all(axis=0)))
        raise IntegrationDiverged(bad, what)
    return X


def _rk4_factors(op: CirculantOperator, h):
    z = h * op.symbol
    return z, 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24


def _check_finite(X, what):
    if not np.isfinite(X).all():
        bad = int(np.argmax(~np.isfinite(X).all(axis=0)))
        raise IntegrationDiverged(bad, what)


def _rk4_linear_spectral(op: CirculantOperator, forcing, h, x0, what):
    """Same recurrence as the sparse path, diagonalised by the FFT."""
    n = forcing.shape[1]
    z, r = _rk4_factors(op, h)
    lam = op.symbol[:, None]
    F = np.fft.rfft(forcing, axis=0)
    F0, F1 = F[:, :-1], F[:, 1:]
    Fm = 0.5 * (F0 + F1)
    G = (h / 6) * (F0 + 4 * Fm + F1) + (h**2 / 6) * lam * (F0 + 2 * Fm)
    G += (h**3 / 12) * lam**2 * (F0 + Fm) + (h**4 / 24) * lam**3 * F0
    Y = np.empty((n, r.size), dtype=complex)
    with np.errstate(over="ignore", invalid="ignore"):
        Y[0] = np.fft.rfft(x0)
        _complex_recurrence(r, np.ascontiguousarray(G.T), Y)
        X = np.ascontiguousarray(np.fft.irfft(Y, n=op.m, axis=1).T)
    X[:, 0] = x0
    _check_finite(X, what)
    return X


@numba.njit(cache=True)
def _complex_recurrence(r, G, Y):
    for j in range(G.shape[0]):
        for k in range(r.shape[0]):
            Y[j + 1, k] = r[k] * Y[j, k] + G[j, k]


def rk4_linear_stagewise(op, forcing, h, x0):
    """Textbook four-stage RK4 loop; slow, kept as a reference."""
    n = forcing.shape[1]
    X = np.empty((x0.shape[0], n))
    X[:, 0] = x = np.asarray(x0, dtype=float)
    for j in range(n - 1):
        f0, f1 = forcing[:, j], forcing[:, j + 1]
        fm = 0.5 * (f0 + f1)
        k1 = op @ x + f0
        k2 = op @ (x + 0.5 * h * k1) + fm
        k3 = op @ (x + 0.5 * h * k2) + fm
        k4 = op @ (x + h * k3) + f1
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        X[:, j + 1] = x
    return X


def solve_state(sys: FomSystem, tg: TimeGrid, u: np.ndarray) -> np.ndarray:
    """Forward solve; returns the m x n snapshot matrix with column 0 = q0."""
    u = _check_control(sys, tg, u)
    return rk4_linear(sys.propagation_operator, sys.B @ u, tg.dt, sys.q0)


def solve_adjoint(sys: FomSystem, tg: TimeGrid, state: np.ndarray, discrete: bool = False) -> np.ndarray:
    """Adjoint trajectory for ``-p' = A^T p + C^T C (q - q_d)``, ``p(t_f) = 0``.

    By default this is a backward RK4 sweep with linearly interpolated
    sources at half steps; its last column is exactly zero. With
    ``discrete=True`` the returned ``p`` is instead the exact discrete
    adjoint, i.e. ``mu u + B^T p`` is the gradient of :func:`cost` for the
    forward RK4 solve (w.r.t. the time-weighted inner product).
    """
    source = sys.CTC[:, None] * (state - sys.q_d)
    if discrete:
        return rk4_linear_adjoint(sys.propagation_operator, source, tg.dt, tg.weights())
    P = rk4_linear(sys.propagation_operator_T, source[:, ::-1], tg.dt, np.zeros(sys.grid.m), what="adjoint")
    return P[:, ::-1]


def rk4_linear_adjoint(op, sources: np.ndarray, h: float, weights: np.ndarray) -> np.ndarray:
    """Exact discrete adjoint of :func:`rk4_linear`.

    For a cost ``sum_j weights[j] * phi_j(x_j)`` with ``d phi_j / d x_j =
    sources[:, j]``, returns ``P`` such that the derivative of the cost with
    respect to the forcing sample ``f_j`` equals ``weights[j] * P[:, j]``.
    The initial state is treated as fixed.
    """
    n = sources.shape[1]
    if isinstance(op, CirculantOperator):
        return _rk4_linear_adjoint_spectral(op, sources, h, weights)
    opT = op.T.tocsr() if sp.issparse(op) else op.T
    RT = rk4_propagator(opT, h)
    ws = (weights * sources)[:, ::-1].T
    with np.errstate(over="ignore", invalid="ignore"):
        lam = np.ascontiguousarray(_sweep(RT, ws[1:], ws[0])[::-1].T)
    # one-step forcing maps: S0 for f_j, S1 for f_{j+1}
    L1 = lam[:, 1:]
    t1, t2, t3 = _matpow_terms(opT, L1, 3)[1:]
    s0 = (h / 6) * (3 * L1 + 2 * h * t1 + 0.75 * h**2 * t2 + 0.25 * h**3 * t3)
    s1 = (h / 6) * (3 * L1 + h * t1 + 0.25 * h**2 * t2)
    P = np.zeros_like(sources)
    P[:, :-1] += np.asarray(s0)
    P[:, 1:] += np.asarray(s1)
    return P / weights


def _rk4_linear_adjoint_spectral(op: CirculantOperator, sources, h, weights):
    z, r = _rk4_factors(op.T, h)
    lamT = np.conj(op.symbol)
    S = np.fft.rfft(weights * sources, axis=0)[:, ::-1].T
    Y = np.empty_like(S)
    Y[0] = S[0]
    _complex_recurrence(r, np.ascontiguousarray(S[1:]), Y)
    L1 = Y[::-1][1:].T
    s0 = (h / 6) * L1 * (3 + 2 * h * lamT[:, None] + 0.75 * (h * lamT[:, None]) ** 2 + 0.25 * (h * lamT[:, None]) ** 3)
    s1 = (h / 6) * L1 * (3 + h * lamT[:, None] + 0.25 * (h * lamT[:, None]) ** 2)
    P = np.zeros((op.m, sources.shape[1]))
    P[:, :-1] += np.fft.irfft(s0, n=op.m, axis=0)
    P[:, 1:] += np.fft.irfft(s1, n=op.m, axis=0)
    return P / weights


def tracking_integrand(sys: FomSystem, state: np.ndarray) -> np.ndarray:
    r = state - sys.q_d
    return np.einsum("i,ij->j", sys.CTC, r * r)


def cost(sys: FomSystem, tg: TimeGrid, state: np.ndarray, u: np.ndarray) -> float:
    """Quadratic tracking cost; trapezoidal rule in time."""
    w = tg.weights()
    integrand = tracking_integrand(sys, state) + sys.mu * np.sum(u * u, axis=0)
    return 0.5 * float(w @ integrand)


def gradient(sys: FomSystem, u: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``mu u + B^T p`` on the time grid."""
    return sys.mu * u + sys.B.T @ p


def l2_inner(tg: TimeGrid, f: np.ndarray, g: np.ndarray) -> float:
    """Time-weighted inner product of two control-shaped arrays."""
    return float(tg.weights() @ np.sum(f * g, axis=0))


def _check_control(sys, tg, u):
    u = np.asarray(u, dtype=float)
    if u.shape != (sys.n_c, tg.n):
        raise ValueError(f"control must have shape {(sys.n_c, tg.n)}, got {u.shape}")
    if not np.isfinite(u).all():
        raise ValueError("control contains non-finite entries")
    return u
