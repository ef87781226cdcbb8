"""Exception hierarchy shared by every module.

The CLI maps these classes onto disjoint exit codes, so new error types
should subclass the class whose exit code they deserve.
"""


class MdcnError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolationError(MdcnError):
    """An operation was called with arguments that break its contract."""


class ConfigError(MdcnError):
    """A model or training configuration field is missing or invalid."""


class DataError(MdcnError):
    """A dataset, image file, or checkpoint cannot be used as requested."""


class NumericError(MdcnError):
    """Training produced a non-finite value or a numeric check failed."""


class UnsupportedFactorError(MdcnError):
    """The requested upsampling factor has no reconstruction head."""

    def __init__(self, requested, available):
        self.requested = requested
        self.available = tuple(sorted(available))
        super().__init__(
            f"unsupported factor {requested}; available factors: "
            f"{', '.join(str(f) for f in self.available) or 'none'}"
        )


class ImageFormatError(DataError):
    """An image file is malformed; carries the byte offset of the problem."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class CheckpointError(DataError):
    """A checkpoint file cannot be decoded."""


class BadMagicError(CheckpointError):
    """The checkpoint does not start with the expected magic bytes."""


class VersionMismatchError(CheckpointError):
    """The checkpoint was written with an unsupported format version."""


class TruncatedCheckpointError(CheckpointError):
    """The checkpoint ends before the declared payload is complete."""
