class InvalidArgumentError(ValueError):
    """Raised when inputs violate a documented precondition."""


class UndefinedMetricError(ValueError):
    """Raised when a metric is not defined for the given inputs (e.g. one class only)."""


class NumericalError(RuntimeError):
    """Raised when a numerical routine cannot produce a usable result."""
