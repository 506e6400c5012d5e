"""Exception hierarchy.

``DataError`` subclasses describe bad inputs (CLI exit code 2); ``ModelError``
subclasses describe unusable or inconsistent models (exit code 3).
"""


class PFFPError(Exception):
    pass


class DataError(PFFPError):
    pass


class ModelError(PFFPError):
    pass


# signal
class InvalidRecord(DataError, ValueError):
    pass


class NoImpactFound(DataError):
    pass


class TooShort(DataError):
    pass


class NonPositiveImpactVelocity(DataError, ValueError):
    pass


class VelocityNeverReachesZero(DataError):
    pass


class DepthExceedsRange(DataError):
    pass


# corpus
class Unclassifiable(DataError, ValueError):
    pass


class ClassTooSmall(DataError):
    pass


class TooFewNeighbors(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class EmptySet(DataError, ValueError):
    pass


# forest
class EmptyHistogram(ValueError):
    pass


class GridEmpty(ValueError):
    pass


class UntrainedModel(ModelError):
    pass


# bnn
class Diverged(ModelError):
    pass


# fusion
class NotAProbabilityVector(ValueError):
    pass


class DegenerateProduct(ArithmeticError):
    pass


# persistence / cli
class ConfigError(PFFPError):
    pass


class VersionMismatch(ModelError):
    pass


class CorruptBundle(ModelError):
    pass


class SplitMismatch(ModelError):
    pass
