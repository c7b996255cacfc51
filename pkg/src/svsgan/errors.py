"""Exception types raised across the package."""


class SVSGANError(Exception):
    """Base class for all errors raised by svsgan."""


class ParameterError(SVSGANError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(SVSGANError, ValueError):
    """Array shapes or lengths are inconsistent."""


class InputError(SVSGANError, ValueError):
    """Input data is non-finite or otherwise unusable."""


class UsageError(SVSGANError, RuntimeError):
    """An API was called out of order, e.g. with a stale forward trace."""


class DataError(SVSGANError):
    """Problems with files on disk or dataset layout."""


class FormatError(DataError):
    """A file is malformed (bad magic, truncated header, ...)."""


class UnsupportedFormatError(DataError):
    """A well-formed file uses an encoding we do not handle."""


class IngestError(DataError):
    """A dataset file does not follow the expected channel convention."""


class IntegrityError(DataError):
    """A checksum stored alongside data does not match its contents."""


class CheckpointError(DataError):
    """A checkpoint is incompatible with the requested use."""


class TrainingError(SVSGANError, ArithmeticError):
    """Optimisation produced non-finite values."""


class NumericalError(SVSGANError, ArithmeticError):
    """A linear system could not be solved reliably."""
