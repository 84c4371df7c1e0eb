"""Exception types raised by fairfid."""


class FairFidError(Exception):
    """Base class for all fairfid errors."""


class ImageFormatError(FairFidError, ValueError):
    """Image buffer has the wrong shape, dtype or value range."""


class QuantizationError(FairFidError, ValueError):
    """Non-finite pixel value met while quantizing."""

    def __init__(self, row, col, channel, value):
        self.location = (row, col, channel)
        self.value = value
        super().__init__(
            f"non-finite pixel value {value!r} at row {row}, column {col}, channel {channel}"
        )


class CodecError(FairFidError, ValueError):
    """Invalid compression settings or a failed encode/decode."""


class DimensionMismatchError(FairFidError, ValueError):
    """Two inputs that must agree in size do not."""


class OracleTooLargeError(FairFidError, ValueError):
    """Direct 2-D resampling requested on an image that is too large."""


class PatternError(FairFidError, ValueError):
    """Test pattern parameters the canvas cannot represent."""


class ModelNotFoundError(FairFidError, FileNotFoundError):
    """Inception backend selected but the model file is missing."""


class StatsError(FairFidError, ValueError):
    """Feature statistics cannot be computed from the given input."""


class MatrixSqrtError(StatsError):
    """Eigendecomposition failed even after diagonal regularization."""

    def __init__(self, message, eps):
        self.eps = eps
        super().__init__(f"{message} (regularization eps={eps:.3e})")


class CacheFormatError(FairFidError, ValueError):
    """Stats cache file is truncated or not a fairfid cache."""


class IncomparableError(FairFidError):
    """Scores would come from different extractors or preprocessing."""
