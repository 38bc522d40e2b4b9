"""Exception hierarchy shared by all pdtomo modules.

Exit-code families used by the CLI:
  parse errors -> 2, precondition violations -> 3, solver failures -> 4,
  negative check verdicts -> 5.
"""


class PdtomoError(Exception):
    """Base class for all toolkit errors."""


class ParseError(PdtomoError):
    """Malformed expression or job description.

    Carries the byte offset of the offending token when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class PreconditionError(PdtomoError):
    """An operation was called with inputs violating its contract."""


class GridMismatch(PreconditionError):
    pass


class NonPositiveConductivity(PreconditionError):
    pass


class GradientFloorViolation(PreconditionError):
    pass


class NonUnitDirection(PreconditionError):
    pass


class NonOrthogonalPair(PreconditionError):
    pass


class NeedAtLeastTwoFunctionals(PreconditionError):
    pass


class MissingCauchyData(PreconditionError):
    pass


class CharacteristicBoundaryNormal(PreconditionError):
    """The boundary normal is characteristic for the leading form.

    ``nodes`` lists the (side, index) locations where the coefficient
    1 - 2*(fhat . nu)^2 fell below tolerance.
    """

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = list(nodes)


class RankDeficiency(PreconditionError):
    """rank(F1, F2) < 2 at some node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SolverError(PdtomoError):
    """A linear or nonlinear solve failed to reach its tolerance."""


class SolverFailure(SolverError):
    pass


class LinearSolveFailure(SolverError):
    pass
