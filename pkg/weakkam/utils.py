import logging
import math
import os
import re
from typing import IO, Callable, Dict, Tuple, Union

import numpy as np
import yaml

log = logging.getLogger("weakkam.cli")

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0

_path_matcher = re.compile(r"(\S+)?(\$\{([^}^{]+)\})")


def _path_constructor(loader, node):
    """Extract the matched value, expand env variable, and replace the match."""
    value = node.value
    match = _path_matcher.match(value)
    env_var = match.groups()[2]
    return value.replace(match.groups()[1], os.environ.get(env_var, ""))


yaml.add_implicit_resolver("!path", _path_matcher, None, yaml.SafeLoader)
yaml.add_constructor("!path", _path_constructor, yaml.SafeLoader)


def read_config(
    config: Union[str, IO[str]], validate: Callable = None
) -> Dict[str, str]:
    """Read configuration file.

    Parameters
    ----------
    config
        input configuration
    validate
        validation schema

    Returns
    -------
    parsed configuration
    """
    try:
        conf = yaml.safe_load(config) or {}
    except:  # noqa
        log.critical("Unable to read configuration file.")
        raise
    if validate:
        conf = validate(conf)
    return conf


def wrap(x: np.ndarray) -> np.ndarray:
    """Map coordinates to the fundamental domain [0, 1)."""
    return np.mod(x, 1.0)


def torus_delta(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shortest signed displacement a - b on the unit torus, per axis."""
    return np.mod(np.asarray(a) - np.asarray(b) + 0.5, 1.0) - 0.5


def torus_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance on the flat unit torus (last axis is the dimension)."""
    return np.linalg.norm(torus_delta(a, b), axis=-1)


def golden_iterations(width: float, tol: float) -> int:
    """Number of golden-section reductions bringing ``width`` below ``tol``."""
    if width <= tol:
        return 0
    return int(math.ceil(math.log(tol / width) / math.log(INVPHI)))


def golden_section(
    func: Callable[[np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    tol: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized golden-section minimization.

    Every entry of ``lo``/``hi`` is an independent bracket. The iteration
    count depends only on the widest bracket and ``tol``, so the result
    does not depend on how the brackets are batched.

    Parameters
    ----------
    func
        maps an array of abscissae (same shape as ``lo``) to values
    lo, hi
        bracket ends
    tol
        final bracket width

    Returns
    -------
    (argmin, min) arrays of the same shape as ``lo``
    """
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    width = float(np.max(b - a)) if a.size else 0.0
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc = func(c)
    fd = func(d)
    for _ in range(golden_iterations(width, tol)):
        left = fc < fd
        # keep [a, d] when f(c) < f(d), otherwise [c, b]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new = np.where(left, b - INVPHI * (b - a), a + INVPHI * (b - a))
        fnew = func(new)
        c, d, fc, fd = (
            np.where(left, new, d),
            np.where(left, c, new),
            np.where(left, fnew, fd),
            np.where(left, fc, fnew),
        )
        # rounding can misorder the interior points on tiny brackets
        swap = c > d
        c, d = np.where(swap, d, c), np.where(swap, c, d)
        fc, fd = np.where(swap, fd, fc), np.where(swap, fc, fd)
    best = fc <= fd
    return np.where(best, c, d), np.where(best, fc, fd)
