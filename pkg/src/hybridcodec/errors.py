"""Exception taxonomy shared by every stage of the codec.

The CLI maps each class onto a distinct exit code, so new failure modes
should subclass the closest existing error rather than ``Exception``.
"""


class CodecError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(CodecError):
    """Malformed header, bad magic or an otherwise unparsable byte stream."""


class TruncationError(FormatError):
    def __init__(self, message, offset=None, frame_index=None):
        super().__init__(message)
        self.offset = offset
        self.frame_index = frame_index


class UnsupportedVersionError(FormatError):
    pass


class ChecksumError(FormatError):
    def __init__(self, message, gop_index):
        super().__init__(message)
        self.gop_index = gop_index


class DimensionError(CodecError, ValueError):
    pass


class EncodeError(CodecError):
    """Raised when a value cannot be represented in the bitstream."""


class StructureError(CodecError):
    """Coded data does not match the GOP layout implied by the configuration."""


class OptimizationError(CodecError):
    """Latent optimisation diverged even after the step-size retry."""
