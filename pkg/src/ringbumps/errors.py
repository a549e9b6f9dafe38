"""Exception hierarchy shared by the ring-model modules."""


class RingBumpsError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(RingBumpsError, ValueError):
    pass


class InvalidSize(ConfigError):
    pass


class InvalidTime(ConfigError):
    pass


class UnsupportedDerivative(RingBumpsError):
    """The firing function has no pointwise derivative (Heaviside)."""


class NumericalFailure(RingBumpsError):
    """Base for failures of a numerical procedure on valid input."""


class NoNonzeroSolution(NumericalFailure):
    pass


class NoFixedPoint(NumericalFailure):
    pass


class UnstableBranch(NumericalFailure):
    pass


class NumericalBlowup(NumericalFailure):
    pass


class TooFarFromManifold(NumericalFailure):
    pass


class OutsideBasin(NumericalFailure):
    pass


class TraceUnreliable(NumericalFailure):
    pass


class InsufficientData(NumericalFailure):
    pass


class SweepDegraded(NumericalFailure):
    pass
