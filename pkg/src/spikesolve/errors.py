"""Exception hierarchy shared by every module."""


class SpikesolveError(Exception):
    """Base class for all package errors."""


class ConfigError(SpikesolveError, ValueError):
    pass


class NumericalError(SpikesolveError, ArithmeticError):
    pass


class DataIOError(SpikesolveError, OSError):
    pass


class PositionOutOfDomain(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class GridMismatch(DimensionMismatch):
    pass


class NonPositiveInput(ConfigError):
    pass


class UnknownScenario(ConfigError):
    pass


class EmptyMask(ConfigError):
    pass


class EmptyComparison(ConfigError):
    pass


class NoMatches(ConfigError):
    pass


class NonPositivePrediction(NumericalError):
    """KL fidelity evaluated where the prediction is not strictly positive."""


class ZeroCertificate(NumericalError):
    """The initial dual certificate vanishes, so no starting lambda exists."""


class MalformedHeader(DataIOError):
    pass


class ShapeMismatch(DataIOError):
    pass
