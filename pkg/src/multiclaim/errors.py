"""Exception taxonomy shared across the package.

The CLI maps ValidationError to exit code 1 and NumericalError to exit
code 2.
"""


class MulticlaimError(Exception):
    """Base class for package errors."""


class ValidationError(MulticlaimError, ValueError):
    """Bad inputs: malformed files, schema violations, inconsistent data."""


class NumericalError(MulticlaimError, RuntimeError):
    """Evaluation or optimization failed numerically."""


class NonConvergenceError(NumericalError):
    """Optimizer stopped without meeting its convergence criterion."""


class UnidentifiableDataError(ValidationError):
    """Data cannot identify the requested parameters (e.g. no claims)."""
