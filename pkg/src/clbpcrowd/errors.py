"""Exception hierarchy.

Every error carries a short ``code`` used by the command-line tool when it
prints ``ERROR <code>: <detail>``.
"""


class ClbpError(Exception):
    code = "Error"


# imaging
class ImageNotFound(ClbpError, FileNotFoundError):
    code = "FileNotFound"


class UnsupportedFormat(ClbpError):
    code = "UnsupportedFormat"


class CorruptImage(ClbpError):
    code = "CorruptImage"


class BlockTooLarge(ClbpError):
    code = "BlockTooLarge"


class CellTooLarge(ClbpError):
    code = "CellTooLarge"


# descriptor / baselines
class OutOfBounds(ClbpError):
    code = "OutOfBounds"


class ImageTooSmall(ClbpError):
    code = "ImageTooSmall"


class EmptyCell(ClbpError):
    code = "EmptyCell"


class RegionTooSmall(ClbpError):
    code = "RegionTooSmall"


# svm
class DimensionMismatch(ClbpError):
    code = "DimensionMismatch"


class SingleClass(ClbpError):
    code = "SingleClass"


class InsufficientSamples(ClbpError):
    code = "InsufficientSamples"


class ModelIOError(ClbpError, OSError):
    code = "IoError"


class VersionMismatch(ClbpError):
    code = "VersionMismatch"


class ChecksumMismatch(ClbpError):
    code = "ChecksumMismatch"


class NoConvergenceWarning(UserWarning):
    """SMO hit its iteration budget; the returned model is best-so-far."""


# dataset
class ParseError(ClbpError):
    code = "ParseError"


class InconsistentLabel(ClbpError):
    code = "InconsistentLabel"


class MissingFrame(ClbpError):
    code = "MissingFrame"


class InsufficientData(ClbpError):
    code = "InsufficientData"


# eval / cli
class LengthMismatch(ClbpError):
    code = "LengthMismatch"


class Empty(ClbpError):
    code = "Empty"


class CountMismatch(ClbpError):
    code = "CountMismatch"


class GeometryMismatch(ClbpError):
    code = "GeometryMismatch"


class ConfigError(ClbpError):
    code = "ConfigError"
