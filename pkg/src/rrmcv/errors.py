"""Exception types shared across the package.

``ArgumentError`` subclasses ``ValueError`` so callers that only care about
bad input can keep catching the builtin.
"""


class RRMCVError(Exception):
    """Base class for all package errors."""


class ArgumentError(RRMCVError, ValueError):
    """An argument is outside the domain of the operation."""


class NumericalError(RRMCVError, ArithmeticError):
    """An iterative or linear-algebra routine failed to produce a result."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class InfeasibleTargetError(ArgumentError):
    """The requested in-control ARL cannot be reached by the run rule."""

    def __init__(self, message, bound):
        super().__init__(message)
        self.bound = bound


class DegenerateDataError(RRMCVError, ValueError):
    """Subgroup data do not define a finite sample MCV (singular covariance)."""


class ParseError(RRMCVError, ValueError):
    """Malformed input file. ``line`` is 1-based."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(ParseError):
    """Rows of an input file disagree on dimensions or layout."""
