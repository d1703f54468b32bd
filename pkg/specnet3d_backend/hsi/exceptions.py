class HsiError(Exception):
    """Base error for the classification engine; `code` is machine-readable."""

    code = "hsi_error"


class ShapeError(HsiError, ValueError):
    code = "shape_error"

    def __init__(self, message, axis=None, stage=None):
        self.axis = axis
        self.stage = stage
        if stage:
            message = f"{stage}: {message}"
        super().__init__(message)


class ChannelMismatchError(HsiError, ValueError):
    code = "channel_mismatch"


class DimensionMismatchError(HsiError, ValueError):
    code = "dim_mismatch"


class LabelRangeError(HsiError, ValueError):
    code = "label_out_of_range"


class NumericError(HsiError):
    code = "non_finite"


class FormatError(HsiError, ValueError):
    code = "format_error"


class SplitError(HsiError, ValueError):
    code = "split_error"


class ConfigError(HsiError, ValueError):
    code = "config_error"


class MetricError(HsiError, ValueError):
    code = "metric_undefined"


class MissingCacheError(HsiError, ValueError):
    code = "missing_cache"


class CheckpointError(HsiError, ValueError):
    code = "checkpoint_error"


class StorageError(HsiError, OSError):
    code = "io_error"
