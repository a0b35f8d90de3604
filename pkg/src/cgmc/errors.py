"""Exception hierarchy shared across the package.

Each class maps to a distinct CLI exit code (see :mod:`cgmc.cli`).
"""


class CGMCError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(CGMCError, ValueError):
    """Malformed configuration, wrong array length or invalid parameter."""

    exit_code = 2


class DomainError(CGMCError, ValueError):
    """A value lies outside the admissible set (e.g. block sum parity)."""

    exit_code = 2


class CapacityError(CGMCError):
    """An exact enumeration would exceed the desk-scale cap."""

    exit_code = 3


class CoverageError(CGMCError):
    """A correlation-table bin needed for evaluation was never sampled."""

    exit_code = 4

    def __init__(self, message, bins=()):
        super().__init__(message)
        self.bins = tuple(bins)


class SingularityError(CGMCError, ArithmeticError):
    """The three-body log argument is not positive."""

    exit_code = 6


class ValidationFailure(CGMCError):
    exit_code = 5
