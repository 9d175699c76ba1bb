"""Exception hierarchy shared by every stage of the pipeline."""


class SegmentationError(Exception):
    """Base class for all library errors."""

    exit_code = 4


class EmptyMask(SegmentationError):
    pass


class DegenerateMask(SegmentationError):
    pass


class DimensionMismatch(SegmentationError):
    pass


class TooFewPoints(SegmentationError):
    pass


class BasisError(SegmentationError):
    pass


class InvalidK(SegmentationError):
    pass


class DegenerateAffinity(SegmentationError):
    pass


class SameOwner(SegmentationError):
    pass


class EmptyPairing(SegmentationError):
    pass


class PlacementError(SegmentationError):
    pass


class ProviderError(SegmentationError):
    exit_code = 3


class ConfigError(SegmentationError):
    exit_code = 2


class IoError(SegmentationError):
    exit_code = 3
