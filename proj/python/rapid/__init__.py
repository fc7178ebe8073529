"""Importance-weighted group-relative policy gradients on enumerable tasks."""

from ._core import *  # noqa: F401,F403
from ._core import RapidError, builtin_task, make_policy, train

__all__ = ["RapidError", "builtin_task", "make_policy", "train"]
