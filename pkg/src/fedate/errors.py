"""Exception hierarchy.

Two families map onto the CLI exit codes: ``ValidationError`` (bad input,
exit code 2) and ``NumericalError`` (a well-formed problem the numerics
cannot solve, exit code 3).
"""

from __future__ import annotations


class FedAteError(Exception):
    """Base class for all package errors."""


class ValidationError(FedAteError, ValueError):
    """Input violates a documented precondition."""


class NumericalError(FedAteError, ArithmeticError):
    """A numerical routine could not produce a trustworthy answer."""


class ParseError(ValidationError):
    """Malformed input record."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ValidationError):
    """Required column or field is missing."""


class DimensionError(ValidationError):
    """Array shapes do not agree."""


class SingleStudy(ValidationError):
    """Operation needs at least two studies."""


class FormulaInvalid(ValidationError):
    """No closed-form variance exists for this estimator under the scenario."""


class RankDeficient(NumericalError):
    """Design matrix is not of full column rank at the requested tolerance."""


class NoConvergence(NumericalError):
    """Iterative routine did not reach its tolerance."""


class NotPositiveDefinite(NumericalError):
    """Cholesky factorization failed."""


class EmptyArm(NumericalError):
    """A treatment arm has no rows."""


class DegenerateArm(NumericalError):
    """Arm proportions or sizes make a plug-in variance undefined."""


class ZeroVariance(NumericalError):
    """Inverse-variance weights would be infinite."""


class Divergence(NumericalError):
    """Gradient iterations blew up; the learning rate is too large."""


class IoError(ValidationError, OSError):
    """Output destination cannot be written."""
