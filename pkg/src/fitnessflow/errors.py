"""Exception hierarchy."""


class FitnessFlowError(Exception):
    """Base class for all package errors."""


class DimensionError(FitnessFlowError, ValueError):
    """Field or matrix shapes are inconsistent with the problem or grid."""


class InvalidDataError(FitnessFlowError, ValueError):
    """Problem data violates symmetry, definiteness or finiteness."""


class SingularMatrixError(FitnessFlowError, ValueError):
    """A (restricted) interaction matrix is singular or too ill-conditioned."""


class StructuralConditionError(FitnessFlowError, ValueError):
    """A steady state has a negative survivor component."""


class ContractViolation(FitnessFlowError, ValueError):
    """An operation received a negative density where u >= 0 is required."""


class ConsistencyError(FitnessFlowError, ArithmeticError):
    """Equivalent formulas of the same quantity disagree beyond tolerance."""


class EnumerationCapError(FitnessFlowError, ValueError):
    """Subset enumeration requested for more species than the configured cap."""


class SolverError(FitnessFlowError, RuntimeError):
    """Time stepping failed; ``time`` is the simulation time of the failing step."""

    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} (t={time!r})")
        self.time = time


class ScenarioError(FitnessFlowError, ValueError):
    """Scenario text failed to parse or validate; ``errors`` lists every problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))
