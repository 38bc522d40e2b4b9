import numpy as np
import pytest

from pdtomo.discrete import (
    conservative_apply,
    conservative_gamma_jacobian,
    conservative_operator,
    diff_matrix,
    flux_form_operator,
    interior_indices,
    second_diff_matrix,
)
from pdtomo.fields import Grid


@pytest.fixture
def grid():
    return Grid((9, 7), (1.0 / 8.0, 1.0 / 6.0))


def test_diff_matrix_matches_np_gradient(grid):
    rng = np.random.default_rng(0)
    u = rng.standard_normal(grid.node_count)
    arr = u.reshape(grid.shape)
    for axis in range(grid.dim):
        expected = np.gradient(arr, grid.spacing[axis], axis=axis, edge_order=2).ravel()
        got = diff_matrix(grid, axis) @ u
        assert np.max(np.abs(got - expected)) < 1e-12


def test_second_diff_exact_on_quadratics(grid):
    X, Y = grid.meshgrid()
    u = (3.0 * X**2 - 2.0 * X + 1.0).ravel()
    d2 = second_diff_matrix(grid, 0) @ u
    assert np.max(np.abs(d2 - 6.0)) < 1e-9
    assert np.max(np.abs(second_diff_matrix(grid, 1) @ u)) < 1e-9


def test_conservative_matches_matrix_free(grid):
    rng = np.random.default_rng(1)
    gamma = 1.0 + rng.uniform(0.0, 2.0, grid.node_count)
    u = rng.standard_normal(grid.node_count)
    a = conservative_operator(grid, gamma) @ u
    b = conservative_apply(grid, gamma, u)
    assert np.max(np.abs(a - b)) < 1e-11


def test_conservative_annihilates_affine_for_constant_gamma(grid):
    X, Y = grid.meshgrid()
    u = (2.0 * X - 3.0 * Y + 0.5).ravel()
    out = conservative_operator(grid, np.ones(grid.node_count)) @ u
    assert np.max(np.abs(out)) < 1e-10


def test_gamma_jacobian_is_exact_derivative(grid):
    rng = np.random.default_rng(2)
    gamma = 1.5 + rng.uniform(0.0, 1.0, grid.node_count)
    u = rng.standard_normal(grid.node_count)
    dgamma = rng.standard_normal(grid.node_count)
    J = conservative_gamma_jacobian(grid, gamma, u)
    eps = 1e-6
    fplus = conservative_operator(grid, gamma + eps * dgamma) @ u
    fminus = conservative_operator(grid, gamma - eps * dgamma) @ u
    fd = (fplus - fminus) / (2 * eps)
    got = J @ dgamma
    assert np.max(np.abs(fd - got)) < 1e-7 * (1 + np.max(np.abs(got)))


def test_flux_form_matches_conservative_for_constant_gamma(grid):
    # with a constant isotropic coefficient, the arithmetic and harmonic face
    # averages coincide and the mixed terms vanish
    c = 1.7
    B = np.tile(c * np.eye(2)[None, :, :], (grid.node_count, 1, 1))
    A1 = flux_form_operator(grid, B)
    A2 = conservative_operator(grid, np.full(grid.node_count, c))
    d = (A1 - A2).tocoo()
    assert np.max(np.abs(d.data)) < 1e-11 if d.nnz else True


def test_interior_indices(grid):
    inner = interior_indices(grid)
    assert inner.size == (grid.shape[0] - 2) * (grid.shape[1] - 2)
    deep = interior_indices(grid, 2)
    assert deep.size == (grid.shape[0] - 4) * (grid.shape[1] - 4)
