"""Exception hierarchy. The CLI maps each family onto an exit code."""


class TopicMobError(Exception):
    """Base class for all package errors."""


class ConfigError(TopicMobError, ValueError):
    """Invalid pipeline or estimator configuration."""


class DataError(TopicMobError, ValueError):
    """Malformed input data.

    ``row`` is the 1-based data row number when the error is tied to one row.
    """

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class NumericalError(TopicMobError, ArithmeticError):
    """Non-finite objective or failed optimisation."""


class BoundaryError(NumericalError):
    """A parameter estimate sits on the boundary of the parameter space."""
