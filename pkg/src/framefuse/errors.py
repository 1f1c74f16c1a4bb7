"""Exception types raised across the synthesis pipeline."""


class FramefuseError(Exception):
    """Base class for all pipeline errors."""


class ManifestError(FramefuseError):
    """Capture manifest is malformed or references unusable frames."""


class FlowFileError(FramefuseError):
    """Flow file is missing, truncated, or carries invalid payload."""


class MissingFlowError(FramefuseError):
    """A synthesis task lacks required flow fields."""

    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__("missing flow fields: " + ", ".join(self.missing))


class SegmentationError(FramefuseError):
    """Superpixel segmentation or region bookkeeping failed."""


class NoGoodRegionsError(SegmentationError):
    """A frame has no region that passes the reliability test."""

    def __init__(self, frame_label):
        self.frame_label = frame_label
        super().__init__(f"no reliable regions in {frame_label}; cannot merge")


class WarpError(FramefuseError):
    """Mesh construction or the warp solve failed."""


class RankDeficientWarpError(WarpError):
    """The warp normal equations are singular for a region."""

    def __init__(self, region_label, rank, size):
        self.region_label = region_label
        super().__init__(
            f"warp system for {region_label} is rank deficient ({rank}/{size})"
        )


class LabelingError(FramefuseError):
    """MRF construction or optimization failed."""


class HoleFillError(FramefuseError):
    """Hole filling has no boundary data or did not converge."""


class ConfigError(FramefuseError):
    """Configuration file or override is invalid."""
