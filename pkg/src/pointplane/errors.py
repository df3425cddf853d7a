"""Exception hierarchy shared by the package and the command line."""


class PointPlaneError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for this category."""

    exit_code = 1


class EmptyInputError(PointPlaneError, ValueError):
    exit_code = 3


class FormatError(PointPlaneError, ValueError):
    exit_code = 3


class ConfigError(PointPlaneError, ValueError):
    exit_code = 2


class DegeneratePointError(PointPlaneError, ValueError):
    exit_code = 3


class ShapeError(PointPlaneError, ValueError):
    exit_code = 4


class NonFiniteError(PointPlaneError, FloatingPointError):
    exit_code = 5


class CheckpointError(PointPlaneError, ValueError):
    exit_code = 3
