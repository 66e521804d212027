"""Exception types shared across the toolkit."""


class ActionError(ValueError):
    """An action is outside the environment's action space."""


class ShapeError(ValueError):
    """An array argument has the wrong dimensionality."""


class FormatError(ValueError):
    """A policy or expert file is malformed."""


class ConfigError(ValueError):
    """An experiment configuration is inconsistent or unparseable."""


class StatError(ValueError):
    """Not enough data for the requested statistic."""


class ExpertTrainingError(RuntimeError):
    """Expert training exhausted its budget without solving the task."""


class UnsupportedError(TypeError):
    """The operation is not defined for this policy or expert kind."""


class DegenerateNormalization(ZeroDivisionError):
    """Expert and random returns coincide; normalized return is undefined."""


class ValidationError(ValueError):
    """An internal structural invariant was violated at construction time."""
