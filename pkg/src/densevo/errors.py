"""Exception hierarchy shared across the pipeline stages."""


class DensevoError(Exception):
    """Base class for all library errors."""


class InvalidInputError(DensevoError, ValueError):
    pass


class InsufficientMatchesError(DensevoError):
    pass


class DegenerateConfigurationError(DensevoError):
    pass


class UndistortError(DensevoError):
    pass


class BehindCameraError(DensevoError):
    pass


class InitializationRetry(DensevoError):
    """Two-view initialization must be retried on a later frame."""


class PoseFailure(DensevoError):
    """PnP could not produce a trustworthy pose; the frame is lost."""


class TriangulationFailure(DensevoError):
    pass


class RankDeficiencyError(DensevoError):
    """Reduced camera system is singular (usually an unfixed gauge)."""


class DatasetError(DensevoError):
    pass


class LoadError(DatasetError):
    pass


class FormatError(DatasetError):
    pass


class ConfigError(DensevoError):
    pass


class EvaluationError(DensevoError):
    pass
