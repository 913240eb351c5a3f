"""Deterministic CSV and JSON artifacts.

Floats are written with 17 significant digits and JSON keys are sorted,
so equal results give byte-identical files.
"""
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np

from .flow import PhaseCloud
from .grid import GridFunction, PeriodicGrid

logger = logging.getLogger("weakkam.artifacts")

FLOAT_FMT = "%.17g"

PathLike = Union[str, Path]


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n"


def write_json(path: PathLike, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    logger.debug("Wrote %s", path)
    return path


def read_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text())


def write_table(path: PathLike, columns: Sequence[str], rows: Iterable) -> Path:
    """Write a numeric table with a one-line column header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(list(rows), dtype=float).reshape(-1, len(columns))
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=",".join(columns), comments="")
    logger.debug("Wrote %s (%d rows)", path, len(data))
    return path


def read_table(path: PathLike) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))


def _axes(dim: int):
    return ["x", "y"][:dim]


def _header_path(path: Path) -> Path:
    return path.with_name(path.stem + ".header.json")


def write_grid(path: PathLike, f: GridFunction) -> Path:
    """Grid CSV (node coordinates, value) plus a JSON header next to it."""
    path = Path(path)
    rows = np.concatenate([f.grid.points(), f.values.reshape(-1, 1)], axis=1)
    write_table(path, _axes(f.grid.dim) + [f.name], rows)
    write_json(_header_path(path), f.header())
    return path


def read_grid(path: PathLike) -> GridFunction:
    path = Path(path)
    header = read_json(_header_path(path))
    grid = PeriodicGrid(header["n"], header["dim"])
    values = read_table(path)[:, -1]
    return GridFunction(grid, values.reshape(grid.shape), header["name"])


def write_trajectory(path: PathLike, curve) -> Path:
    """Trajectory CSV with columns t, x..., then p... or v..."""
    d = curve.dim
    second = "p" if curve.kind == "xp" else "v"
    columns = ["t"] + [f"x{k}" for k in range(d)] + [f"{second}{k}" for k in range(d)]
    rows = np.concatenate([curve.times[:, None], curve.states], axis=1)
    return write_table(path, columns, rows)


def write_cloud(path: PathLike, cloud) -> Path:
    d = cloud.dim
    columns = [f"x{k}" for k in range(d)] + [f"p{k}" for k in range(d)]
    return write_table(path, columns, cloud.points)


def read_cloud(path: PathLike) -> PhaseCloud:
    return PhaseCloud(read_table(path))
