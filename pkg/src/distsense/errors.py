"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input caught before any simulation work starts."""


class SimulationError(RuntimeError):
    """Numerical failure during propagation, synthesis or estimation."""


class UnboundedVarianceError(SimulationError):
    """Fisher information is zero, so no finite variance bound exists."""


class EstimatorUndefinedError(SimulationError):
    """The likelihood does not depend on the estimated parameter."""
