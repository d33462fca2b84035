"""Exception types shared across the package."""


class FeederValidationError(ValueError):
    """A feeder description violates a structural requirement."""


class DuplicateId(FeederValidationError):
    pass


class CycleDetected(FeederValidationError):
    pass


class Disconnected(FeederValidationError):
    pass


class NonPositiveImpedance(FeederValidationError):
    pass


class InvalidRecord(FeederValidationError):
    """A record violates a modelling assumption (slack load, orphan inverter, ...)."""


class RootDegreeNotOne(FeederValidationError):
    """Raised by operations that require the slack bus to have a single child."""


class DimensionMismatch(ValueError):
    pass


class ParseError(ValueError):
    """A feeder file could not be interpreted; carries field context."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message if field is None else f"{message} (field: {field})")


class PowerFlowError(RuntimeError):
    pass


class NoConvergence(PowerFlowError):
    """The sweep did not meet tolerance; loading may be beyond the solvable region."""

    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"power flow did not converge in {iterations} iterations "
            f"(last voltage change {residual:.3e})"
        )


class NegativeSquaredVoltage(PowerFlowError):
    """Squared voltage went non-positive: the operating point is infeasible."""


class MaxIterations(RuntimeError):
    """An iterative solver exhausted its iteration budget."""
