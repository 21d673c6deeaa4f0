"""Exception types raised across the package."""


class OdamotError(Exception):
    """Base class for all package errors."""


class EmptyBox(OdamotError):
    pass


class DimMismatch(OdamotError):
    pass


class NonFinite(OdamotError):
    pass


class Degenerate(OdamotError):
    pass


class NoNegatives(OdamotError):
    pass


class AllZeroWeights(OdamotError):
    pass


class FeatureUnavailable(OdamotError):
    pass


class NoDescriptors(OdamotError):
    pass


class BadMagic(OdamotError):
    pass


class TruncatedFile(OdamotError):
    pass


class OutOfOrderFrame(OdamotError):
    pass


class MalformedRow(OdamotError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class NonMonotoneFrames(OdamotError):
    pass


class FrameRangeMismatch(OdamotError):
    pass


class ConfigError(OdamotError):
    pass


class DegenerateVariance(UserWarning):
    """Emitted when a fitted Gaussian dimension hits the variance floor."""
