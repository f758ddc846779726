"""
Exception types shared across the conversion and training pipeline.
"""


class SleepFdlError(Exception):
    """Base class for every error raised by this package."""
    pass


class ConfigError(SleepFdlError, ValueError):
    """Exception raised when configuration values are missing or invalid."""
    pass


class EdfParseError(SleepFdlError):
    """Exception raised for malformed EDF headers or data records."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class AnnotationParseError(SleepFdlError):
    """Exception raised for malformed TAL framing or annotation tables."""

    def __init__(self, message, record_index=None):
        self.record_index = record_index
        if record_index is not None:
            message = f"{message} (record {record_index})"
        super().__init__(message)


class ChannelSelectionError(SleepFdlError):
    """Exception raised when a channel name matches zero or several signals."""

    def __init__(self, message, available=()):
        self.available = list(available)
        super().__init__(f"{message}; available channels: {', '.join(self.available) or '<none>'}")


class SeriesValueError(SleepFdlError, ValueError):
    """Exception raised for non-finite samples in a series."""

    def __init__(self, index, value):
        self.index = index
        super().__init__(f"Non-finite sample {value!r} at index {index}")


class GraphError(SleepFdlError):
    """Exception raised for graphs that violate a structural requirement."""
    pass


class ShapeError(SleepFdlError, ValueError):
    """Exception raised when array shapes are inconsistent."""

    def __init__(self, message, *shapes):
        self.shapes = shapes
        if shapes:
            message = f"{message}: {' vs '.join(str(tuple(s)) for s in shapes)}"
        super().__init__(message)


class NonFiniteLossError(SleepFdlError):
    """Exception raised when the training loss stops being finite."""

    def __init__(self, batch_index, loss):
        self.batch_index = batch_index
        super().__init__(f"Non-finite loss {loss!r} at batch {batch_index}")


class DatasetError(SleepFdlError):
    """Exception raised for empty, inconsistent or unbalanceable datasets."""
    pass


class CheckpointError(SleepFdlError):
    """Exception raised for unreadable or mismatched checkpoints."""
    pass
