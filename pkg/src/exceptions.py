"""
Exception hierarchy shared by every module of the package
"""

from typing import Optional


class OnlineLearningError(Exception):
    """Base class for all package errors"""


class ConfigurationError(OnlineLearningError):
    """Invalid configuration values or flag combinations"""


class DataError(OnlineLearningError):
    """Malformed or out-of-contract input data"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DimensionError(DataError):
    """Vector length does not match the configured dimension"""


class NumericDivergenceError(OnlineLearningError):
    """A parameter became non-finite during training"""


class UndefinedRatioError(OnlineLearningError):
    """Ratio requested against a zero denominator"""


class ComparisonError(OnlineLearningError):
    """Reports being compared do not cover the same span"""


class IntegrityError(OnlineLearningError):
    """State cannot be serialized or read back faithfully"""


class CheckpointError(IntegrityError):
    """Base class for checkpoint file problems"""


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ChecksumMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass
