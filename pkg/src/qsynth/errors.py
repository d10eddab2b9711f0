"""Exception types shared across the package."""


class QSynthError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(QSynthError, ValueError):
    """An argument violates a documented precondition."""


class FitFailure(QSynthError):
    """A model could not be fitted to the supplied data."""


class TrainingError(QSynthError):
    """Training produced a non-finite loss or gradient."""


class DataError(QSynthError):
    """Input data is missing, unreadable or malformed."""


class ConfigError(QSynthError):
    """A run configuration is invalid."""
