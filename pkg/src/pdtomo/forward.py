"""Forward model: conductivity solves and power-density synthesis.

Solves div(gamma grad u) = -source with Dirichlet data on a Cartesian grid
(5/7-point conservative stencil, harmonic face averages of gamma, Dirichlet
rows eliminated) and produces the internal functionals H = gamma |grad u|^2
together with the Neumann traces used as measured Cauchy data downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discrete import conservative_operator
from .errors import (
    GradientFloorViolation,
    GridMismatch,
    NonPositiveConductivity,
    SolverFailure,
)
from .fields import BoundaryData, ScalarField, gradient, normal_trace

__all__ = [
    "ConductivityProblem",
    "ForwardDataset",
    "solve_conductivity",
    "power_density",
    "synthesize_dataset",
    "DEFAULT_C0",
]

DEFAULT_C0 = 1e-3
DIRECT_LIMIT = 100_000


@dataclass
class ConductivityProblem:
    """div(gamma grad u) = -source in X, u = f on the boundary.

    gamma must stay above ``gamma_floor`` (uniform positivity); the source
    vanishes in the measurement model and exists for manufactured solutions.
    """

    gamma: ScalarField
    dirichlet: BoundaryData
    source: ScalarField | None = None
    gamma_floor: float = 0.0

    def __post_init__(self):
        if self.dirichlet.grid != self.gamma.grid:
            raise GridMismatch("gamma and Dirichlet data live on different grids")
        if self.dirichlet.kind != BoundaryData.DIRICHLET:
            raise GridMismatch("boundary data must be a Dirichlet trace")
        if self.source is not None and self.source.grid != self.gamma.grid:
            raise GridMismatch("source and gamma live on different grids")
        gmin = float(np.min(self.gamma.values))
        if gmin <= self.gamma_floor:
            raise NonPositiveConductivity(
                f"min gamma = {gmin:.6e} is not above the floor {self.gamma_floor:.6e}"
            )


def _boundary_values(grid, bdata: BoundaryData):
    vals = np.zeros(grid.node_count)
    node_vals = bdata.node_values()
    idx = np.fromiter(node_vals.keys(), dtype=np.int64, count=len(node_vals))
    vals[idx] = np.fromiter(node_vals.values(), dtype=float, count=len(node_vals))
    return vals


def solve_conductivity(problem: ConductivityProblem, tol=1e-12) -> ScalarField:
    """Solve the discrete conductivity problem.

    Direct sparse factorization up to ``DIRECT_LIMIT`` interior unknowns,
    conjugate gradients (with an incomplete-factorization preconditioner)
    beyond. The relative residual of the interior system must reach ``tol``
    or SolverFailure is raised.
    """
    grid = problem.gamma.grid
    L = conservative_operator(grid, problem.gamma.values)
    interior = np.flatnonzero(grid.interior_mask())
    lift = _boundary_values(grid, problem.dirichlet)

    A = L[interior][:, interior].tocsc()
    rhs = -(L[interior] @ lift)
    if problem.source is not None:
        rhs = rhs - problem.source.values[interior]

    n = interior.size
    if n <= DIRECT_LIMIT:
        u_int = spla.splu(A).solve(rhs)
    else:
        # -A is SPD; CG on the negated system
        M = None
        try:
            ilu = spla.spilu((-A).tocsc(), drop_tol=1e-5, fill_factor=10)
            M = spla.LinearOperator(A.shape, ilu.solve)
        except RuntimeError:
            M = None
        u_int, info = spla.cg(-A, -rhs, rtol=min(tol, 1e-12), maxiter=20 * n, M=M)
        if info != 0:
            raise SolverFailure(f"conjugate gradients stopped with info={info}")

    scale = float(np.linalg.norm(rhs))
    resid = float(np.linalg.norm(A @ u_int - rhs))
    if resid > tol * max(scale, 1.0):
        raise SolverFailure(
            f"interior residual {resid:.3e} above tolerance {tol:.1e} (rhs scale {scale:.3e})"
        )

    u = lift.copy()
    u[interior] = u_int
    return ScalarField(grid, u)


def power_density(gamma: ScalarField, u: ScalarField) -> ScalarField:
    """H = gamma |grad u|^2 nodewise; nonnegative wherever gamma is."""
    if gamma.grid != u.grid:
        raise GridMismatch("gamma and u live on different grids")
    g2 = np.sum(gradient(u).values ** 2, axis=1)
    return ScalarField(gamma.grid, gamma.values * g2)


@dataclass
class ForwardDataset:
    """Synthesized measurements for a set of boundary conditions."""

    u: list
    H: list
    g: list  # Neumann traces of the solutions
    min_gradient: float


def synthesize_dataset(
    gamma: ScalarField,
    boundary_set,
    sources=None,
    c0=DEFAULT_C0,
    tol=1e-12,
) -> ForwardDataset:
    """Solve every boundary condition, emit (u_j, H_j, g_j).

    Also evaluates min_j min_x |grad u_j| against the floor ``c0`` and raises
    GradientFloorViolation when the dataset cannot support unit measurement
    directions.
    """
    if len(boundary_set) < 1:
        raise GridMismatch("need at least one boundary condition")
    sources = sources or [None] * len(boundary_set)
    us, Hs, gs = [], [], []
    floor = np.inf
    for f, src in zip(boundary_set, sources):
        u = solve_conductivity(ConductivityProblem(gamma, f, src), tol=tol)
        us.append(u)
        Hs.append(power_density(gamma, u))
        gs.append(normal_trace(u))
        mags = np.linalg.norm(gradient(u).values, axis=1)
        floor = min(floor, float(np.min(mags)))
    if floor < c0:
        raise GradientFloorViolation(
            f"min_j min_x |grad u_j| = {floor:.3e} below the floor c0 = {c0:.3e}"
        )
    return ForwardDataset(u=us, H=Hs, g=gs, min_gradient=floor)
