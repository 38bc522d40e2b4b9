"""pdtomo: power-density tomography toolkit on Cartesian grids.

Synthesizes internal power-density data for the variable-conductivity
equation, checks the algebraic health of the measurement set (collective
ellipticity, boundary covering, unique continuation criteria), assembles the
linearized systems and their Cauchy-constrained normal forms, and runs the
fixed-point conductivity reconstruction with convergence diagnostics.
"""

__version__ = "0.1.0"

from .errors import (
    CharacteristicBoundaryNormal,
    GradientFloorViolation,
    GridMismatch,
    LinearSolveFailure,
    MissingCauchyData,
    NeedAtLeastTwoFunctionals,
    NonOrthogonalPair,
    NonPositiveConductivity,
    NonUnitDirection,
    ParseError,
    PdtomoError,
    PreconditionError,
    RankDeficiency,
    SolverFailure,
)
from .fields import (
    BoundaryData,
    Grid,
    ScalarField,
    VectorField,
    discrete_norms,
    gradient,
    normal_trace,
    read_field,
    read_field_bundle,
    write_field,
    write_field_bundle,
)
from .kernels import HAVE_COMPILED

__all__ = [
    "__version__",
    "HAVE_COMPILED",
    "Grid",
    "ScalarField",
    "VectorField",
    "BoundaryData",
    "gradient",
    "normal_trace",
    "discrete_norms",
    "read_field",
    "write_field",
    "read_field_bundle",
    "write_field_bundle",
    "PdtomoError",
    "ParseError",
    "PreconditionError",
    "GridMismatch",
    "NonPositiveConductivity",
    "GradientFloorViolation",
    "NonUnitDirection",
    "NonOrthogonalPair",
    "NeedAtLeastTwoFunctionals",
    "MissingCauchyData",
    "CharacteristicBoundaryNormal",
    "RankDeficiency",
    "SolverFailure",
    "LinearSolveFailure",
]
