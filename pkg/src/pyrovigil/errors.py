"""Exception types shared across the package."""


class PyrovigilError(Exception):
    """Base class for package errors."""


class ConfigError(PyrovigilError):
    """Bad or inconsistent configuration (CLI exit code 2)."""


class DataError(PyrovigilError):
    """Bad input data: unreadable frames, malformed files (CLI exit code 3)."""


class ConvergenceError(PyrovigilError):
    """Optimizer hit its iteration cap; carries the residual KKT violation."""

    def __init__(self, message, violation):
        super().__init__(message)
        self.violation = violation
