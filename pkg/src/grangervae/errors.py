"""Shared exception types.

The CLI maps these onto exit codes: configuration/contract problems exit
with 2, numeric failures (training divergence, simulator blow-up) with 3.
"""


class ConfigurationError(ValueError):
    """Bad shapes, bad config values, inconsistent files."""


class ContractViolation(RuntimeError):
    """An operation was called outside its documented contract."""


class TrainingError(RuntimeError):
    """Numeric failure during optimization (non-finite loss or gradient)."""


class SimulationError(RuntimeError):
    """Simulator blow-up (NaN or runaway magnitude)."""


class UndefinedMetricError(ValueError):
    """A ranking metric was requested on single-class labels."""
