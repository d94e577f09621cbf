"""Exception hierarchy shared by all modules.

Input and configuration problems derive from ``ValueError``; numerical
breakdowns derive from ``ArithmeticError``. The CLI maps the first group to
exit code 2 and the second to exit code 3.
"""


class CITestError(Exception):
    """Base class for all errors raised by this package."""


class InputError(CITestError, ValueError):
    """Malformed data: wrong shapes, empty arrays, non-finite values."""


class ConfigError(CITestError, ValueError):
    """Invalid parameters or incompatible settings."""


class IngestionError(InputError):
    """A CSV file could not be turned into a dataset."""


class NumericalError(CITestError, ArithmeticError):
    """A computation broke down numerically."""


class DegenerateError(NumericalError):
    """A quantity that must be non-degenerate (a variance, a moment, a
    leave-one-out denominator) collapsed to zero."""


class FitError(NumericalError):
    """Every hyperparameter candidate failed during model fitting."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = list(failures or [])


class ExperimentError(CITestError):
    """Too many trials of an experiment failed."""
