"""Exception hierarchy shared by all cyboost modules."""


class CyboostError(Exception):
    """Base class for every error raised by this package."""


class FitError(CyboostError):
    pass


class ShapeError(CyboostError):
    pass


class SchemaError(CyboostError):
    """A required column or feature is missing or unknown."""


class DataError(CyboostError):
    """Input values are malformed (NaN, unparseable dates, bad labels)."""


class DomainError(CyboostError):
    """An argument lies outside the domain of a numerical operation."""


class ModeError(CyboostError):
    """Target or weights are incompatible with the requested mode."""


class DegenerateTargetError(ModeError):
    pass


class DegenerateWeights(ModeError):
    pass


class SplitError(CyboostError):
    pass


class ArchiveError(CyboostError):
    """A model archive could not be read (bad format or version)."""
