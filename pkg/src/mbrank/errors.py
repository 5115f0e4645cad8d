"""Exception types shared across the package."""


class MbrankError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(MbrankError):
    pass


class NotSymmetric(MbrankError):
    pass


class NoConvergence(MbrankError):
    pass


class InvalidDimension(MbrankError):
    pass


class DomainError(MbrankError):
    pass


class InsufficientReplicates(MbrankError):
    pass


class NonFiniteValue(MbrankError):
    pass


class UnpairedReplicate(MbrankError):
    pass


class DimensionMismatch(MbrankError):
    pass


class TooFewGenes(MbrankError):
    pass


class TooFewTopGenes(MbrankError):
    pass


class ParameterOutOfRange(MbrankError):
    pass


class MissingHyperparameters(MbrankError):
    pass


class DegenerateLayout(MbrankError):
    pass


class InsufficientDegreesOfFreedom(MbrankError):
    pass


class TruthMismatch(MbrankError):
    pass


class LengthMismatch(MbrankError):
    pass


class ParseError(MbrankError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(MbrankError):
    pass
