"""Exception types shared across the package.

ValidationError marks bad inputs (rejected preconditions, malformed
expressions, out-of-range parameters) and maps to CLI exit code 1.
NumericalError marks solver or quadrature failures on valid inputs and
maps to CLI exit code 2.
"""


class ValidationError(ValueError):
    """Input rejected before any numerics ran."""


class NumericalError(RuntimeError):
    """A numerical routine failed to reach its accuracy or convergence goal."""
