"""Exception hierarchy shared across the toolkit."""


class GraspTraceError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(GraspTraceError):
    """Invalid layer/network/weight configuration or malformed spec input."""


class SegmentationError(GraspTraceError):
    """Point cloud segmentation cannot proceed (e.g. too few valid points)."""


class DataError(GraspTraceError):
    """Dataset or record content is unusable."""


class PredictionError(GraspTraceError):
    """Grasp prediction failed for a specific end effector."""

    def __init__(self, message: str, effector: str | None = None):
        super().__init__(message)
        self.effector = effector
