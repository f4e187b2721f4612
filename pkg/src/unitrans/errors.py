"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see cli.main): configuration/usage
problems exit 1, data problems exit 2, training problems exit 3.
"""


class UnitransError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(UnitransError):
    """Invalid spec, config file, or parameter combination."""

    exit_code = 1


class DataError(UnitransError):
    """Malformed or inconsistent data encountered at runtime."""

    exit_code = 2


class TrainingError(UnitransError):
    """Training diverged or could not proceed."""

    exit_code = 3


class EvaluationError(UnitransError):
    """A metric is undefined for the given inputs (empty reference, zero variance, ...)."""

    exit_code = 2
