import numpy as np
import pytest

from pdtomo.errors import (
    GradientFloorViolation,
    GridMismatch,
    NonPositiveConductivity,
)
from pdtomo.fields import (
    BoundaryData,
    Grid,
    ScalarField,
    discrete_norms,
    gradient,
)
from pdtomo.forward import (
    ConductivityProblem,
    power_density,
    solve_conductivity,
    synthesize_dataset,
)


def unit_gamma(grid):
    return ScalarField.constant(grid, 1.0)


def test_affine_boundary_reproduced_exactly():
    g = Grid.unit(17)
    u = solve_conductivity(
        ConductivityProblem(unit_gamma(g), BoundaryData.from_function(g, lambda x, y: x))
    )
    X, _ = g.meshgrid()
    assert np.max(np.abs(u.values - X.ravel())) < 1e-12


def test_harmonic_quadratic_reproduced():
    g = Grid.unit(17)
    u = solve_conductivity(
        ConductivityProblem(
            unit_gamma(g), BoundaryData.from_function(g, lambda x, y: x * x - y * y)
        )
    )
    X, Y = g.meshgrid()
    assert np.max(np.abs(u.values - (X * X - Y * Y).ravel())) < 1e-10


def mms_error(n):
    """gamma = 1 + 0.5 x, u* = sin(pi x) sin(pi y), f = 0; the source is the
    analytic -div(gamma grad u*)."""
    g = Grid.unit(n)
    X, Y = g.meshgrid()
    pi = np.pi
    gamma = ScalarField(g, (1.0 + 0.5 * X).ravel())
    ustar = np.sin(pi * X) * np.sin(pi * Y)
    div_term = 0.5 * pi * np.cos(pi * X) * np.sin(pi * Y) - 2.0 * pi * pi * (1.0 + 0.5 * X) * ustar
    src = ScalarField(g, -div_term.ravel())
    u = solve_conductivity(ConductivityProblem(gamma, BoundaryData.zero(g), src))
    return discrete_norms(ScalarField(g, u.values - ustar.ravel()))[0]


def test_manufactured_solution_second_order():
    assert 3.5 <= mms_error(32) / mms_error(64) <= 4.5


def test_discrete_maximum_principle():
    g = Grid.unit(15)
    rng = np.random.default_rng(8)
    gamma = ScalarField(g, 0.5 + rng.uniform(0.0, 3.0, g.node_count))
    f = BoundaryData.from_function(g, lambda x, y: np.sin(3.0 * x) + y)
    u = solve_conductivity(ConductivityProblem(gamma, f))
    lo = min(np.min(arr) for arr in f.sides.values())
    hi = max(np.max(arr) for arr in f.sides.values())
    assert np.min(u.values) >= lo - 1e-10
    assert np.max(u.values) <= hi + 1e-10


def test_linearity_in_boundary_data():
    g = Grid.unit(13)
    gamma = ScalarField.from_function(g, lambda x, y: 1.0 + x * y)
    f1 = BoundaryData.from_function(g, lambda x, y: x)
    f2 = BoundaryData.from_function(g, lambda x, y: np.cos(2.0 * y))
    a, b = 2.5, -1.25
    fc = BoundaryData.from_function(g, lambda x, y: a * x + b * np.cos(2.0 * y))
    u1 = solve_conductivity(ConductivityProblem(gamma, f1))
    u2 = solve_conductivity(ConductivityProblem(gamma, f2))
    uc = solve_conductivity(ConductivityProblem(gamma, fc))
    assert np.max(np.abs(uc.values - a * u1.values - b * u2.values)) < 1e-10


def test_gamma_positivity_enforced():
    g = Grid.unit(8)
    bad = ScalarField(g, np.linspace(-0.1, 1.0, g.node_count))
    with pytest.raises(NonPositiveConductivity):
        ConductivityProblem(bad, BoundaryData.zero(g))


def test_power_density_values():
    g = Grid.unit(9)
    X, Y = g.meshgrid()
    ux = ScalarField(g, X.ravel())
    assert np.allclose(power_density(unit_gamma(g), ux).values, 1.0, atol=1e-12)
    uxy = ScalarField(g, (X + Y).ravel())
    two = ScalarField.constant(g, 2.0)
    assert np.allclose(power_density(two, uxy).values, 4.0, atol=1e-12)
    gam = ScalarField(g, (1.0 + X**2).ravel())
    uy = ScalarField(g, Y.ravel())
    assert np.allclose(power_density(gam, uy).values, (1.0 + X**2).ravel(), atol=1e-12)


def test_power_density_nonnegative_and_grid_checked():
    g = Grid.unit(9)
    rng = np.random.default_rng(1)
    gam = ScalarField(g, 0.1 + rng.uniform(0, 1, g.node_count))
    u = ScalarField(g, rng.standard_normal(g.node_count))
    assert np.min(power_density(gam, u).values) >= 0.0
    other = Grid.unit(10)
    with pytest.raises(GridMismatch):
        power_density(gam, ScalarField.constant(other, 1.0))


def test_synthesize_unit_dataset():
    g = Grid.unit(9)
    ds = synthesize_dataset(
        unit_gamma(g),
        [
            BoundaryData.from_function(g, lambda x, y: x),
            BoundaryData.from_function(g, lambda x, y: y),
        ],
    )
    assert np.allclose(ds.H[0].values, 1.0, atol=1e-11)
    assert np.allclose(ds.H[1].values, 1.0, atol=1e-11)
    assert np.allclose(ds.g[0].side(0, True), 1.0, atol=1e-11)
    assert np.allclose(ds.g[0].side(0, False), -1.0, atol=1e-11)
    assert np.allclose(ds.g[0].side(1, True), 0.0, atol=1e-11)
    assert np.allclose(ds.g[1].side(1, True), 1.0, atol=1e-11)
    assert ds.min_gradient == pytest.approx(1.0, abs=1e-10)


def test_synthesize_superposition():
    g = Grid.unit(11)
    fs = [
        BoundaryData.from_function(g, lambda x, y: x),
        BoundaryData.from_function(g, lambda x, y: y),
        BoundaryData.from_function(g, lambda x, y: x + y),
    ]
    ds = synthesize_dataset(unit_gamma(g), fs)
    F = [gradient(u).values for u in ds.u]
    assert np.max(np.abs(F[2] - F[0] - F[1])) < 1e-10
    assert np.allclose(ds.H[2].values, 2.0, atol=1e-10)


def test_gradient_floor_violation():
    g = Grid.unit(9)
    # x^2 - y^2 has a critical point at the origin corner
    with pytest.raises(GradientFloorViolation):
        synthesize_dataset(
            unit_gamma(g), [BoundaryData.from_function(g, lambda x, y: x * x - y * y)]
        )


def test_3d_affine_solve():
    g = Grid.unit(6, dim=3)
    gamma = ScalarField.constant(g, 2.0)
    u = solve_conductivity(
        ConductivityProblem(gamma, BoundaryData.from_function(g, lambda x, y, z: x + z))
    )
    X, Y, Z = g.meshgrid()
    assert np.max(np.abs(u.values - (X + Z).ravel())) < 1e-11
    H = power_density(gamma, u)
    assert np.allclose(H.values, 4.0, atol=1e-10)
