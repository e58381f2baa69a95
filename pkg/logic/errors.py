"""
Exception hierarchy shared by the solver, optimizer and experiment layers.

The CLI maps ConfigError to exit code 2 and NumericalError to exit code 3.
"""


class InversionError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(InversionError):
    """Invalid user input: bad parameters, bad config file, bad grid pairing."""


class NumericalError(InversionError):
    """A computation could not be carried out."""


class InvalidOrderError(ConfigError):
    pass


class InvalidSizeError(ConfigError):
    pass


class InvalidBoundsError(ConfigError):
    pass


class GridRatioError(ConfigError):
    """Fine and coarse grids are not integer refinements of each other."""


class InsufficientPointsError(ConfigError):
    pass


class DimensionMismatchError(NumericalError):
    pass


class MeshMismatchError(NumericalError):
    pass


class NonPositiveCoefficientError(NumericalError):
    pass


class FactorizationError(NumericalError):
    pass


class StalledError(NumericalError):
    """Line search found no descent even after a steepest-descent restart."""
