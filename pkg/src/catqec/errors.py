"""Exception types shared across the package."""


class CatQECError(Exception):
    """Base class for all library errors."""


class CutoffTooSmall(CatQECError):
    pass


class NegativeRate(CatQECError):
    pass


class StepUnderflow(CatQECError):
    pass


class DomainError(CatQECError):
    pass


class SingularDenominator(CatQECError):
    pass


class DegenerateDeltas(CatQECError):
    pass


class ConvergenceFailure(CatQECError):
    pass


class NonPhysicalChannel(CatQECError):
    pass


class InsufficientData(CatQECError):
    pass


class InvalidDistance(CatQECError):
    pass


class MissingChannel(CatQECError):
    pass


class UndecomposableFault(CatQECError):
    pass


class OddDefectsWithoutBoundary(CatQECError):
    pass


class FitDiverged(CatQECError):
    pass


class AllZeroCounts(CatQECError):
    pass


class Unreachable(CatQECError):
    pass


class NoCrossing(CatQECError):
    pass


class MissingColumn(CatQECError):
    pass


class ConfigError(CatQECError):
    pass
