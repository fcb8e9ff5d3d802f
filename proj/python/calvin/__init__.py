"""Differentiable maze planners: exact VI, VIN and the constrained planner."""

try:
    from ._calvin import *  # noqa: F401,F403  (installed wheel layout)
except ImportError:  # pragma: no cover - in-tree builds expose a flat module
    from _calvin import *  # noqa: F401,F403
