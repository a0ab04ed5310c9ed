"""Exception hierarchy shared by every hstc module."""


class HSTCError(Exception):
    """Base class for all errors raised by this project."""


class BoundsError(HSTCError, IndexError):
    """An index, mode or count lies outside its valid range."""


class ShapeError(HSTCError, ValueError):
    """Array shapes or column counts do not agree."""


class InputError(HSTCError, ValueError):
    """Input values are unusable, e.g. non-finite entries or bad targets."""


class ConfigError(HSTCError, ValueError):
    """Invalid configuration value or missing input path."""


class FormatError(HSTCError, ValueError):
    """A cube, label or model file violates its on-disk format."""


class TrainingError(HSTCError, RuntimeError):
    """Training produced a non-finite objective."""


class UnsupportedOperationError(HSTCError, TypeError):
    """The requested operation is not defined for this model type."""


__all__ = [
    "HSTCError",
    "BoundsError",
    "ShapeError",
    "InputError",
    "ConfigError",
    "FormatError",
    "TrainingError",
    "UnsupportedOperationError",
]
