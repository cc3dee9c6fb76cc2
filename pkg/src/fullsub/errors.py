"""Exception hierarchy.

Every error raised by the package derives from :class:`FullsubError`.  The
three intermediate classes map onto CLI exit codes (config 2, data 3,
numeric 4).
"""


class FullsubError(Exception):
    exit_code = 1


class ConfigError(FullsubError, ValueError):
    exit_code = 2


class DataError(FullsubError, ValueError):
    exit_code = 3


class NumericError(FullsubError, ArithmeticError):
    exit_code = 4


# data problems
class DegenerateTreatment(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class InvalidK(DataError):
    pass


class ScoreOutOfRange(DataError):
    pass


class InvalidQuantile(DataError):
    pass


class ZeroWeight(DataError):
    pass


class EmptyData(DataError):
    pass


class EmptyArm(DataError):
    pass


class ArmTooSmall(DataError):
    pass


class InfeasiblePartition(DataError):
    pass


class PkOutOfRange(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonBinaryTreatment(DataError):
    pass


class MissingValues(DataError):
    pass


# numeric failures
class RankDeficient(NumericError):
    pass


class NotConverged(NumericError):
    pass


class SingularGram(NumericError):
    pass


class NonPositiveLogArgument(NumericError):
    pass


class TooManyFailures(NumericError):
    pass
