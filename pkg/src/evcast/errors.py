"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class EvcastError(Exception):
    """Base class for all package errors."""


class DataError(EvcastError, ValueError):
    """Input data is malformed or violates a contract."""


class NumericError(EvcastError, ArithmeticError):
    """A numerical routine failed (singular system, no convergence, ...)."""


class CausalityError(DataError):
    """A p-feature was sourced from a feature it may not depend on."""
