"""Policy distillation, unfolding and simulatability measurement toolkit."""

__version__ = "0.1.0"

from . import envs, errors  # noqa: F401
