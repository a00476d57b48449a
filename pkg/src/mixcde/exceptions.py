"""Exception and warning classes raised across the package."""


class MixcdeError(Exception):
    """Base class for package errors."""


class DimensionError(MixcdeError, ValueError):
    """Array shapes disagree with the parameter or dataset dimensions."""


class NonFiniteInputError(MixcdeError, ValueError):
    """An input array holds NaN or infinite entries."""


class InvalidParameterError(MixcdeError, ValueError):
    """A parameter violates its documented invariants."""


class RankDeficientError(MixcdeError, ValueError):
    """The regression design matrix is not of full column rank.

    Attributes
    ----------
    column : str
        Name of the first column found to be linearly dependent on the
        columns before it.
    """

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"design matrix is rank deficient at column {column!r}")


class SamplerInitError(MixcdeError, RuntimeError):
    """No prior draw gave a finite log posterior at initialization."""

    def __init__(self, message, attempts, last_logpost):
        self.attempts = attempts
        self.last_logpost = last_logpost
        super().__init__(message)


class ChainFormatError(MixcdeError, ValueError):
    """A chain file could not be parsed.

    Attributes
    ----------
    line : int
        1-based line number of the offending record (0 when the problem is
        not tied to one line).
    """

    def __init__(self, message, line=0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class UnsupportedVersionError(ChainFormatError):
    """The file declares a format version this package cannot read."""


class BandwidthSelectionError(MixcdeError, RuntimeError):
    """Every optimizer start failed; the best incumbent is attached."""

    def __init__(self, message, best=None, best_value=float("nan")):
        self.best = best
        self.best_value = best_value
        super().__init__(message)


class NumericalFailureError(MixcdeError, ArithmeticError):
    """A quadrature returned a value outside its mathematically valid range."""


class DegenerateVarianceWarning(UserWarning):
    """Residual variance was floored to keep hyperparameters finite."""


class OutOfSupportWarning(UserWarning):
    """A kernel estimate was requested where no data carry weight."""
