"""
Error Types

Exceptions raised by the bound computations and the experiment front end.
Each one also derives from the builtin a caller would expect (ValueError for
bad inputs, RuntimeError for numerical failures).
"""

from typing import Optional, Sequence


class PnBoundsError(Exception):
    """Base class for every error raised by pnbounds."""


class ConfigError(PnBoundsError, ValueError):
    """Experiment configuration cannot be parsed or resolved."""


class ModelValidityError(PnBoundsError, ValueError):
    """Inputs fall outside the validity region of the OFDM radar model."""


class DimensionMismatchError(PnBoundsError, ValueError):
    """Array shapes do not match the frame geometry."""


class UndefinedDerivativeError(PnBoundsError, ValueError):
    """A PN variance derivative was requested at the |lag| = 0 kink."""


class NoPeakError(PnBoundsError, ValueError):
    """The delay-Doppler surface has no peak (all-zero observation)."""


class InvalidSymbolsError(PnBoundsError, ValueError):
    """Symbol grid has a zero entry, so reciprocal filtering is undefined."""


class NumericalError(PnBoundsError, RuntimeError):
    """Base class for numerical failures (exit code 3 in the CLI)."""


class DegenerateCovarianceError(NumericalError):
    """PN covariance could not be factorized even at the largest jitter."""


class UnidentifiableParameterError(NumericalError):
    """
    Fisher information matrix is singular.

    Attributes:
        direction: Unit vector spanning the (numerical) null space
        parameter: Name of the parameter with the largest null-space weight
    """

    def __init__(self, message: str, direction: Optional[Sequence[float]] = None,
                 parameter: Optional[str] = None):
        super().__init__(message)
        self.direction = None if direction is None else list(direction)
        self.parameter = parameter


class SingularMatrixError(NumericalError):
    """Matrix needed by the MCRB sandwich cannot be inverted."""

    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class ExclusionLimitError(NumericalError):
    """Too many PN realizations were dropped from an average."""

    def __init__(self, message: str, excluded: int = 0, total: int = 0):
        super().__init__(message)
        self.excluded = excluded
        self.total = total
