"""Exception hierarchy.

Errors fall into three families so the command line can map them onto exit
codes: configuration problems (1), bad or missing data (2) and model or
numerical failures (3).
"""


class AffordError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(AffordError, ValueError):
    pass


class DataError(AffordError):
    pass


class ModelError(AffordError):
    pass


# -- data ------------------------------------------------------------------

class ParseError(DataError):
    """Malformed input file. ``where`` names the line or field at fault."""

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class TruncatedGroup(ParseError):
    pass


class UnknownEntityName(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class MissingFile(DataError, FileNotFoundError):
    pass


class ClassTooSmall(DataError):
    pass


class EmptyHoldout(DataError):
    pass


class HoldoutLeak(DataError):
    pass


class NoLabels(DataError):
    pass


class EmptyInput(DataError):
    pass


class FlatCloud(DataError):
    pass


class BadBinCount(ConfigError):
    pass


# -- model / numeric -------------------------------------------------------

class DimensionMismatch(ModelError):
    pass


class InconsistentDimensions(DimensionMismatch):
    pass


class MissingEntitySamples(ModelError):
    pass


class NumericalUnderflow(ModelError):
    pass


class MissingAttribute(ModelError):
    pass


class LayerMismatch(ModelError):
    pass


class EmptyTrainingSet(ModelError):
    pass


class PathExplosion(ModelError):
    pass


class NoFeasibleRegion(ModelError):
    pass


class EmptyRegion(ModelError):
    pass
