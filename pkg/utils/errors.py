"""Exception hierarchy shared by the library modules and the CLI boundary"""


class ScmaLabError(Exception):
    """Base class for every error raised by this package"""


class ConfigError(ScmaLabError, ValueError):
    """Invalid system dimensioning or run configuration"""


class CodebookFormatError(ScmaLabError, ValueError):
    """Codebook / factor-graph / gain file does not parse"""


class SupportMismatchError(ScmaLabError, ValueError):
    """Codeword non-zero off its support, or support disagrees with the factor graph"""


class SizeMismatchError(ScmaLabError, ValueError):
    """Counts in a file do not match the declared configuration"""


class ShapeMismatchError(ScmaLabError, ValueError):
    """Array shapes or widths do not chain"""


class EnumerationLimitError(ScmaLabError):
    """Exhaustive search would exceed the configured hypothesis limit"""


class DetectorInternalError(ScmaLabError):
    """A detector produced a non-finite message or decision metric"""


class BatchSizeError(ScmaLabError, ValueError):
    """Batch normalization in train mode needs at least two rows"""


class MissingForwardStateError(ScmaLabError):
    """backward() called without a retained train-mode forward pass"""


class TrainingDivergedError(ScmaLabError):
    """Loss became NaN or infinite during training"""


class CheckpointError(ScmaLabError):
    """Checkpoint container is corrupt or of an unsupported version"""


class IncompatibleDetectorError(ScmaLabError):
    """Detector cannot be used with the requested codebook / system"""
