"""Registry of suite stages.

A stage is a function taking the suite context and returning a
``StageResult``; it is registered under its function name with
``register_stage`` and looked up as an attribute of this package.
"""
import importlib
import logging
from functools import wraps
from typing import Callable, Dict, Tuple

logger = logging.getLogger("weakkam.stages")

ORDER = ("solve", "regularize", "aubry", "attractor", "lyapunov", "rate")

STAGES: Dict[str, Callable] = {}
REQUIRES: Dict[str, Tuple[str, ...]] = {}


class register_stage:
    """Register a stage together with the stages it needs to run first."""

    def __init__(self, *, requires: Tuple[str, ...] = ()):
        self.requires = tuple(requires)

    def __call__(self, func: Callable):
        name = func.__name__

        @wraps(func)
        def wrapper(ctx):
            logger.info("Running stage %s", name)
            return func(ctx)

        STAGES[name] = wrapper
        REQUIRES[name] = self.requires
        return wrapper


def plan(targets) -> Tuple[str, ...]:
    """Targets plus their transitive requirements, in suite order."""
    _import_stages()
    needed = set()

    def visit(name):
        if name not in REQUIRES:
            raise KeyError(f"unknown stage {name!r}")
        if name not in needed:
            needed.add(name)
            for dep in REQUIRES[name]:
                visit(dep)

    for target in targets:
        visit(target)
    return tuple(name for name in ORDER if name in needed)


def _import_stages():
    importlib.import_module(f"{__name__}.builtin")


def __getattr__(name: str):
    """Return a named stage"""
    try:
        return STAGES[name]
    except KeyError:
        _import_stages()
        if name in STAGES:
            return STAGES[name]
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None


def __dir__():
    """List available stages"""
    _import_stages()
    return list(STAGES.keys())
