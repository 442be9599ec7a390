#!/usr/bin/env python3
"""
Error types raised by the lambda_ci toolkit.

Every error derives from LambdaCIError and from the builtin that best describes it,
so callers may catch either the toolkit root or plain ValueError/RuntimeError.
"""

from typing import Optional


class LambdaCIError(Exception):
    """Root of all toolkit errors"""


class DimensionError(LambdaCIError, ValueError):
    """Grid or component layout cannot hold the requested data"""


class ShapeMismatchError(LambdaCIError, ValueError):
    """Operands live on different grids or have incompatible component counts"""


class MeanViolationError(LambdaCIError, ValueError):
    """A mean-free input carries a nonzero zero mode"""


class PreconditionError(LambdaCIError, ValueError):
    """An operation was called outside its documented domain"""


class AdmissibilityError(LambdaCIError, ValueError):
    """A matrix lies outside the certified ball around the identity"""


class CertificationError(LambdaCIError, RuntimeError):
    """A certified numerical property failed where it was claimed to hold"""


class ResolutionError(LambdaCIError, ValueError):
    """The grid does not resolve the frequencies of a building block"""


class DisjointnessError(LambdaCIError, ValueError):
    """Jet supports cannot be separated at the requested concentration"""


class RegressionError(LambdaCIError, ValueError):
    """A scaling regression has too few usable points"""


class InstabilityError(LambdaCIError, RuntimeError):
    """Time stepping blew up"""


class AlignmentError(LambdaCIError, ValueError):
    """Time series that must share a time grid do not"""


class HistoryError(LambdaCIError, ValueError):
    """A one-sided time kernel reaches before the first stored time"""


class TimeSamplingError(LambdaCIError, ValueError):
    """The time grid does not resolve the temporal oscillation of the jets"""


class EnergyBandError(LambdaCIError, ValueError):
    """The energy gap left for the next level is negative"""


class OrderingError(LambdaCIError, ValueError):
    """A parameter sequence is not ordered as required"""


class RepresentabilityError(LambdaCIError, OverflowError):
    """A schedule value exceeds the float64 range"""


class FieldFormatError(LambdaCIError, ValueError):
    """A binary field file is malformed"""


class InfeasibleDepthError(LambdaCIError, RuntimeError):
    """The measured stress decay cannot certify the requested number of levels"""

    def __init__(self, message: str, deepest_level: int):
        super().__init__(message)
        self.deepest_level = deepest_level


class ConstraintError(LambdaCIError, ValueError):
    """A schedule or energy-profile inequality is violated"""

    def __init__(self, message: str, t: Optional[float] = None):
        super().__init__(message)
        self.t = t


class ConfigError(LambdaCIError, ValueError):
    """A run configuration cannot be parsed or contains unknown keys"""

    def __init__(self, message: str, lineno: Optional[int] = None, colno: Optional[int] = None):
        super().__init__(message)
        self.lineno = lineno
        self.colno = colno
