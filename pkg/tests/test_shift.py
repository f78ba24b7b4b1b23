import numpy as np
import pytest
from hypothesis import given, strategies as st

from spodcontrol.fom import SpatialGrid
from spodcontrol.shift import (
    STENCIL, build_shift_derivative_operator, build_shift_operator, build_shift_second_derivative_operator,
    centered_shift_derivative, estimate_shifts, lagrange_weights, shift_array, shift_columns, split_shift,
)

from conftest import periodic_gaussian


def gaussian_error(m, frac, length=100.0, center=40.0, width2=7.0):
    grid = SpatialGrid(m, length)
    z = (17 + frac) * grid.dx
    f = periodic_gaussian(grid.x, center, width2, length)
    exact = periodic_gaussian(grid.x, center + z, width2, length)
    return np.abs(build_shift_operator(grid, z) @ f - exact).max()


@given(s=st.floats(0.0, 1.0), deg=st.integers(0, 5), deriv=st.integers(0, 2))
def test_lagrange_weights_reproduce_polynomials(s, deg, deriv):
    # the node at offset o sits at position o - 1 relative to the target when s = 0
    nodes = STENCIL.astype(float)
    w = lagrange_weights(s, deriv)
    coef = np.zeros(deg + 1)
    coef[0] = 1.0
    vals = np.polyval(coef, nodes)
    target = np.polyval(np.polyder(coef, deriv) if deriv else coef, s)
    assert w @ vals == pytest.approx(target, abs=1e-9 * max(1.0, abs(target)))


def test_split_shift_ranges():
    grid = SpatialGrid(10, 1.0)
    k, s = split_shift(np.array([0.0, 0.05, 0.1, -0.05, 1.0, 2.35]), grid)
    assert np.all((s > 0) & (s <= 1))
    assert list(k) == [0, 0, 1, 9, 0, 3]


def test_whole_cell_shift_is_roll(rng):
    grid = SpatialGrid(24, 3.0)
    f = rng.standard_normal(24)
    for cells in (-30, -1, 0, 5, 24, 47):
        T = build_shift_operator(grid, cells * grid.dx)
        assert np.array_equal(T @ f, np.roll(f, cells))
        assert T.matrix.nnz == 24


def test_near_whole_cell_snaps():
    grid = SpatialGrid(32, 1.0)
    T = build_shift_operator(grid, 3 * grid.dx * (1 + 1e-13))
    assert T.matrix.nnz == 32


def test_rows_sum_to_one_for_random_shifts(rng):
    grid = SpatialGrid(64, 10.0)
    for z in rng.uniform(-50, 50, 1000):
        M = build_shift_operator(grid, z).matrix
        assert np.abs(np.asarray(M.sum(axis=1)).ravel() - 1).max() < 1e-12


def test_derivative_rows_sum_to_zero(rng):
    grid = SpatialGrid(64, 10.0)
    for z in rng.uniform(-5, 5, 50):
        for op in (build_shift_derivative_operator, build_shift_second_derivative_operator):
            M = op(grid, z)
            assert np.abs(np.asarray(M.sum(axis=1)).ravel()).max() < 1e-9 / grid.dx ** 2


def test_sixth_order_at_fixed_cell_fraction():
    errs = [gaussian_error(m, 0.37) for m in (128, 256, 512, 1024)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 5.5


@pytest.mark.parametrize("deriv", [1, 2])
def test_derivative_operators_match_finite_differences_in_z(deriv, rng):
    grid = SpatialGrid(40, 5.0)
    f = rng.standard_normal(40)
    z = 1.234 * grid.dx
    h = 1e-5 * grid.dx
    lower = build_shift_operator if deriv == 1 else build_shift_derivative_operator
    fd = ((lower(grid, z + h) @ f) - (lower(grid, z - h) @ f)) / (2 * h)
    op = build_shift_derivative_operator if deriv == 1 else build_shift_second_derivative_operator
    assert np.abs(op(grid, z) @ f - fd).max() < 1e-5 * np.abs(fd).max()


def test_derivative_approximates_negative_profile_slope():
    grid = SpatialGrid(800, 100.0)
    f = periodic_gaussian(grid.x, 30.0, 7.0, 100.0)
    z = 12.3
    xs = grid.x - 30.0 - z
    exact = 2 * xs / 7.0 * periodic_gaussian(grid.x, 30.0 + z, 7.0, 100.0)
    assert np.abs(build_shift_derivative_operator(grid, z) @ f - exact).max() < 1e-4


def test_shift_columns_match_sparse_operators(rng):
    grid = SpatialGrid(30, 2.0)
    F = rng.standard_normal((30, 7))
    z = rng.uniform(-3, 3, 7)
    for deriv, op in enumerate((build_shift_operator, build_shift_derivative_operator,
                                build_shift_second_derivative_operator)):
        mats = [op(grid, zj) for zj in z]
        mats = [M.matrix if hasattr(M, "matrix") else M for M in mats]
        fwd = np.column_stack([mats[j] @ F[:, j] for j in range(7)])
        adj = np.column_stack([mats[j].T @ F[:, j] for j in range(7)])
        assert np.allclose(shift_columns(F, z, grid, deriv), fwd, atol=1e-12)
        assert np.allclose(shift_columns(F, z, grid, deriv, transpose=True), adj, atol=1e-12)
        assert np.allclose(shift_array(F[:, :1], z[0], grid, deriv)[:, 0], fwd[:, 0], atol=1e-12)


@given(seed=st.integers(0, 2**31 - 1))
def test_transpose_is_adjoint(seed):
    rng = np.random.default_rng(seed)
    grid = SpatialGrid(20, 1.0)
    F, G = rng.standard_normal((2, 20, 3))
    z = rng.uniform(-2, 2, 3)
    lhs = np.sum(shift_columns(F, z, grid) * G)
    rhs = np.sum(F * shift_columns(G, z, grid, transpose=True))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_centered_derivative_is_skew_and_accurate():
    grid = SpatialGrid(400, 50.0)
    D = centered_shift_derivative(np.eye(400), grid)
    assert np.abs(D + D.T).max() < 1e-12
    f = periodic_gaussian(grid.x, 20.0, 3.0, 50.0)
    slope = -2 * (grid.x - 20.0) / 3.0 * f
    assert np.abs(centered_shift_derivative(f[:, None], grid)[:, 0] + slope).max() < 1e-5


def test_estimate_shifts_recovers_translations():
    grid = SpatialGrid(400, 100.0)
    true = np.linspace(0, 230, 60) + 0.3 * np.sin(np.arange(60))
    Q = np.column_stack([periodic_gaussian(grid.x, 20 + d, 7.0, 100.0) for d in true])
    z = estimate_shifts(Q, grid)
    assert z[0] == 0.0
    assert np.abs(z - (true - true[0])).max() < 1e-3 * grid.dx
    z_rough = estimate_shifts(Q, grid, polish=False)
    assert np.abs(z_rough - (true - true[0])).max() < 5e-2 * grid.dx


def test_estimate_shifts_rejects_flat_columns():
    grid = SpatialGrid(16, 1.0)
    Q = np.ones((16, 3))
    Q[:, 0] = np.sin(2 * np.pi * grid.x)
    with pytest.raises(ValueError, match="flat"):
        estimate_shifts(Q, grid)
