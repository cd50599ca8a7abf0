"""Exception hierarchy shared by every henlab module.

Each class carries the CLI exit code it maps to: 2 for configuration
problems, 3 for data problems, 4 for numeric failures.
"""


class HenLabError(Exception):
    exit_code = 1


class ConfigError(HenLabError):
    exit_code = 2


class DataError(HenLabError):
    exit_code = 3


class NumericError(HenLabError):
    exit_code = 4


# geometry
class DegenerateProjection(NumericError):
    pass


class SingularSystem(NumericError):
    pass


class SingularMatrix(NumericError):
    pass


# raster / io
class OutOfBounds(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class CorruptFile(DataError):
    pass


# datagen
class ImageTooSmall(DataError):
    pass


class EmptyCorpus(DataError):
    pass


# network
class ShapeMismatch(HenLabError, ValueError):
    exit_code = 3


class NonFiniteLoss(NumericError):
    pass


class FormatVersionMismatch(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


# baseline
class TooCloseToBorder(HenLabError, ValueError):
    exit_code = 3


class InsufficientMatches(NumericError):
    pass


class NoConsensus(NumericError):
    pass


# analysis
class EmptyInput(DataError):
    pass
