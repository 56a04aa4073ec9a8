"""Exception hierarchy shared by every module of the toolkit."""


class StochHomError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(StochHomError, ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class NotSymmetric(StochHomError, ValueError):
    pass


class NotElliptic(StochHomError, ValueError):
    pass


class UnsupportedCoefficient(StochHomError, ValueError):
    pass


class SolverDiverged(StochHomError, RuntimeError):
    """An iterative linear solve exceeded its iteration budget."""


class DiffusionSolveDiverged(SolverDiverged):
    pass


class LipschitzViolation(StochHomError, ValueError):
    pass


class IncompatibleRHS(StochHomError, ValueError):
    pass


class CFLViolation(StochHomError, ValueError):
    pass


class BoundViolation(StochHomError, RuntimeError):
    """Density left [m, M]; signals a scheme defect, never a user error."""


class ResolutionViolation(StochHomError, ValueError):
    pass


class IndivisibleSteps(StochHomError, ValueError):
    pass


class InvariantViolation(StochHomError, RuntimeError):
    pass


class PlanInfeasible(StochHomError, ValueError):
    pass


class DegenerateInput(StochHomError, ValueError):
    pass
