"""Exception hierarchy shared by every ipseg module.

Errors fall into three families that the command line maps to exit codes:
usage problems, data problems and numeric aborts.
"""


class IPSegError(Exception):
    """Base class for all package errors."""


class DataError(IPSegError, ValueError):
    """Input data is malformed, inconsistent or unsupported."""


class UsageError(IPSegError, ValueError):
    """An argument or configuration value is illegal."""


class NumericError(IPSegError, ArithmeticError):
    """A computation produced a value that cannot be continued from."""


# volio
class BadMagic(DataError):
    pass


class UnsupportedDatatype(DataError):
    pass


class DimUnsupported(DataError):
    pass


class Truncated(DataError):
    pass


class NonFiniteData(DataError):
    pass


class IoFailure(IPSegError, OSError):
    pass


class AxisOutOfRange(UsageError):
    pass


class AmbiguousOrientation(DataError):
    pass


# autonn
class ShapeMismatch(UsageError):
    pass


class NonIntegralOutput(UsageError):
    pass


class WindowTooLarge(UsageError):
    pass


class DegenerateBatch(NumericError):
    pass


class NotScalarLoss(UsageError):
    pass


# netbuild
class ConfigInvalid(UsageError):
    pass


class IndivisibleInput(UsageError):
    pass


# segloss
class EmptyClassSet(UsageError):
    pass


class BadHyperparameters(UsageError):
    pass


# trainer
class SpecInvalid(UsageError):
    pass


class PairMissing(DataError):
    pass


class DimsMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class ConfigMismatch(UsageError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, epoch, value=float("nan")):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


class VersionUnsupported(DataError):
    pass


class Corrupt(DataError):
    pass


# bench
class DuplicatePipeline(UsageError):
    pass
