"""Exception types raised across the package."""


class McacError(Exception):
    """Base class for all package errors."""


class SingularMap(McacError):
    pass


class NonFiniteGradient(McacError):
    pass


class EmptyContour(McacError):
    pass


class DegenerateRow(McacError):
    pass


class RankDeficient(McacError):
    pass


class DimensionMismatch(McacError):
    pass


class VanishingGradient(McacError):
    pass


class StalledStep(McacError):
    pass


class InfeasibleStart(McacError):
    """Initial matching energy already violates the constraint level."""


class ConfigError(McacError):
    pass
