"""Causal effect estimation for ad placement under partial interference."""

from interference_lab.errors import InvalidArgumentError, NumericalError, UndefinedMetricError
from interference_lab.rules import AllocationRule, enumerate_valid_rules, is_valid

__version__ = "0.1.0"

__all__ = [
    "AllocationRule",
    "InvalidArgumentError",
    "NumericalError",
    "UndefinedMetricError",
    "enumerate_valid_rules",
    "is_valid",
    "__version__",
]
