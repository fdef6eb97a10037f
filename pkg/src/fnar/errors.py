"""Exception and warning types shared across the package."""


class FnarError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(FnarError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(FnarError, ValueError):
    """An evaluation point lies outside the function's domain."""


class IllConditionedBasisError(FnarError):
    """The quadrature grid cannot resolve the requested basis."""


class NonStationaryDgpError(FnarError):
    """The simultaneous system has no stable solution (or iteration diverged)."""


class UnderidentifiedError(FnarError):
    """The instrument design is rank deficient."""


class CannotDifferenceError(FnarError):
    """First differencing requires at least two time periods."""


class MissingDataError(FnarError):
    """An observation set required for interpolation is empty."""


class VarianceUnavailableError(FnarError):
    """The sandwich covariance cannot be formed (singular Jacobian block)."""


class NumericalFailureError(FnarError):
    """An optimization or linear-algebra step produced non-finite values."""


class HarnessError(FnarError):
    """Too many replications failed inside the Monte Carlo harness."""


class SchemaError(FnarError):
    """A text-table input violates its schema.

    Carries the offending line number (1-based, header = line 1) when known.
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if line is not None:
            prefix += f"{line}: "
        super().__init__(prefix + message)


class UnderidentificationWarning(UserWarning):
    """Instruments are present but degenerate (e.g. identically zero)."""


class SmallTWarning(UserWarning):
    """Fixed-effect estimates are averages over very few periods."""
