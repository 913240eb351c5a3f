"""Periodic grids and grid-sampled scalar fields on the unit torus."""
from dataclasses import dataclass, field
from typing import Callable, Dict, Sequence, Tuple

import numpy as np

from .exceptions import GridMismatch

SCHEMES = ("linear", "cubic")
DEFAULT_SCALES = (1, 2, 4, 8)

# stencil offsets per interpolation scheme
_OFFSETS = {"linear": np.array([0, 1]), "cubic": np.array([-1, 0, 1, 2])}


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid with ``n`` points per axis on [0, 1)^dim."""

    n: int
    dim: int = 1

    def __post_init__(self):
        if self.n < 8:
            raise ValueError(f"grid needs at least 8 points per axis, got {self.n}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n ** self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def points(self) -> np.ndarray:
        """Node coordinates, shape (size, dim), C order of ``values.ravel()``."""
        axes = np.meshgrid(*([self.axis()] * self.dim), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    def coarsen(self) -> "PeriodicGrid":
        return PeriodicGrid(self.n // 2, self.dim)


@dataclass(frozen=True)
class GridFunction:
    """Scalar field sampled on a periodic grid.

    Values are stored read-only with shape ``grid.shape``.
    """

    grid: PeriodicGrid
    values: np.ndarray = field(repr=False)
    name: str = "u"

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"field {self.name!r} has non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(
        cls, grid: PeriodicGrid, func: Callable[[np.ndarray], np.ndarray], name: str = "u"
    ) -> "GridFunction":
        """Sample ``func`` (mapping (N, dim) points to (N,) values) at the nodes."""
        return cls(grid, np.asarray(func(grid.points())).reshape(grid.shape), name)

    @classmethod
    def constant(cls, grid: PeriodicGrid, value: float, name: str = "u") -> "GridFunction":
        return cls(grid, np.full(grid.shape, float(value)), name)

    def renamed(self, name: str) -> "GridFunction":
        return GridFunction(self.grid, self.values, name)

    def __call__(self, x, scheme: str = "cubic") -> np.ndarray:
        return interpolate(self, x, scheme)

    def __add__(self, other):
        if isinstance(other, GridFunction):
            _check_same_grid(self, other)
            other = other.values
        return GridFunction(self.grid, self.values + other, self.name)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            _check_same_grid(self, other)
            other = other.values
        return GridFunction(self.grid, self.values - other, self.name)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def header(self) -> Dict:
        return {"dim": self.grid.dim, "n": self.grid.n, "name": self.name}


def _check_same_grid(f: GridFunction, g: GridFunction):
    if f.grid != g.grid:
        raise GridMismatch(f"grids differ: {f.grid} vs {g.grid}")


def _stencil(grid: PeriodicGrid, x: np.ndarray, scheme: str):
    """Base indices, fractional offsets and per-axis weights for ``x``."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown interpolation scheme {scheme!r}")
    s = np.mod(np.asarray(x, dtype=float), 1.0) * grid.n
    nearest = np.rint(s)
    s = np.where(np.abs(s - nearest) < 1e-9, nearest, s)
    base = np.floor(s)
    t = s - base
    return base.astype(np.int64), t


def _weights(t: np.ndarray, scheme: str, derivative: bool = False) -> np.ndarray:
    """Stencil weights, shape t.shape + (len(offsets),)."""
    if scheme == "linear":
        if derivative:
            return np.stack([-np.ones_like(t), np.ones_like(t)], axis=-1)
        return np.stack([1.0 - t, t], axis=-1)
    # periodic Catmull-Rom
    t2, t3 = t * t, t * t * t
    if derivative:
        return 0.5 * np.stack(
            [-1 + 4 * t - 3 * t2, -10 * t + 9 * t2, 1 + 8 * t - 9 * t2, -2 * t + 3 * t2], axis=-1
        )
    return 0.5 * np.stack(
        [-t + 2 * t2 - t3, 2 - 5 * t2 + 3 * t3, t + 4 * t2 - 3 * t3, -t2 + t3], axis=-1
    )


def _tensor_interpolate(f: GridFunction, x, scheme: str, deriv_axis: int = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grid = f.grid
    if x.shape[-1] != grid.dim:
        raise ValueError(f"points must have trailing dimension {grid.dim}")
    lead = x.shape[:-1]
    base, t = _stencil(grid, x.reshape(-1, grid.dim), scheme)
    offsets = _OFFSETS[scheme]
    n = grid.n
    if grid.dim == 1:
        w = _weights(t[:, 0], scheme, derivative=deriv_axis == 0)
        idx = np.mod(base[:, :1] + offsets[None, :], n)
        out = np.sum(w * f.values[idx], axis=-1)
    else:
        wx = _weights(t[:, 0], scheme, derivative=deriv_axis == 0)
        wy = _weights(t[:, 1], scheme, derivative=deriv_axis == 1)
        ix = np.mod(base[:, 0:1] + offsets[None, :], n)
        iy = np.mod(base[:, 1:2] + offsets[None, :], n)
        block = f.values[ix[:, :, None], iy[:, None, :]]
        out = np.einsum("ka,kb,kab->k", wx, wy, block)
    if deriv_axis is not None:
        out = out * n
    return out.reshape(lead)


def interpolate(f: GridFunction, x, scheme: str = "cubic") -> np.ndarray:
    """Periodic linear or Catmull-Rom cubic interpolation, exact at nodes."""
    return _tensor_interpolate(f, x, scheme)


def interpolate_gradient(f: GridFunction, x, scheme: str = "cubic") -> np.ndarray:
    """Gradient of the interpolant at ``x``, shape x.shape."""
    x = np.asarray(x, dtype=float)
    return np.stack(
        [_tensor_interpolate(f, x, scheme, deriv_axis=k) for k in range(f.grid.dim)], axis=-1
    )


def envelope_interpolate(f: GridFunction, x, side: str = "lower") -> np.ndarray:
    """Pointwise min (``lower``) or max (``upper``) of the linear and cubic interpolants.

    The lower envelope never overshoots a concave kink and the upper one
    never undershoots a convex kink.
    """
    if side not in ("lower", "upper"):
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")
    linear = _tensor_interpolate(f, x, "linear")
    cubic = _tensor_interpolate(f, x, "cubic")
    return np.minimum(linear, cubic) if side == "lower" else np.maximum(linear, cubic)


def gradient(f: GridFunction, node: Sequence[int] = None) -> np.ndarray:
    """Central-difference gradient with periodic wrap.

    Returns the covector at ``node`` (a multi-index) or, when ``node`` is
    None, the field of covectors with shape grid.shape + (dim,).
    """
    n = f.grid.n
    grads = [
        (np.roll(f.values, -1, axis=k) - np.roll(f.values, 1, axis=k)) * (n / 2.0)
        for k in range(f.grid.dim)
    ]
    field_ = np.stack(grads, axis=-1)
    if node is None:
        return field_
    return field_[tuple(np.mod(np.atleast_1d(node), n))]


def usable_scales(grid: PeriodicGrid, scales: Sequence[int] = DEFAULT_SCALES) -> Tuple[int, ...]:
    """Scales k with k h < 1/4 on ``grid``."""
    return tuple(k for k in scales if k * grid.h < 0.25)


def second_difference_profile(
    f: GridFunction, scales: Sequence[int] = DEFAULT_SCALES
) -> Dict[str, np.ndarray]:
    """Per-scale one-sided second-difference constants.

    For each integer scale k the quotient (f(x + kh) + f(x - kh) - 2 f(x)) /
    (kh)^2 is taken over all nodes and axes; ``concave`` holds its maximum
    and ``convex`` the maximum of its negation, both clipped at zero.
    """
    scales = list(scales)
    if not scales:
        raise ValueError("scales must be nonempty")
    h = f.grid.h
    concave, convex = [], []
    for k in scales:
        if not k * h < 0.25:
            raise ValueError(f"scale {k} too large for n={f.grid.n}")
        q = np.stack(
            [
                (np.roll(f.values, -k, axis=a) + np.roll(f.values, k, axis=a) - 2 * f.values)
                / (k * h) ** 2
                for a in range(f.grid.dim)
            ]
        )
        concave.append(max(float(np.max(q)), 0.0))
        convex.append(max(float(np.max(-q)), 0.0))
    return {"scales": np.array(scales), "concave": np.array(concave), "convex": np.array(convex)}


def second_difference_constants(
    f: GridFunction, scales: Sequence[int] = DEFAULT_SCALES
) -> Tuple[float, float]:
    """(C_concave, C_convex) maximized over nodes, axes and scales."""
    profile = second_difference_profile(f, scales)
    return float(np.max(profile["concave"])), float(np.max(profile["convex"]))


def scale_variation(values: np.ndarray) -> float:
    """Relative spread (max - min) / max of per-scale constants, 0 for all-zero."""
    values = np.asarray(values, dtype=float)
    top = float(np.max(values))
    if top <= 0:
        return 0.0
    return (top - float(np.min(values))) / top


def sup_distance(f: GridFunction, g: GridFunction) -> float:
    """max |f - g| over the nodes."""
    _check_same_grid(f, g)
    return float(np.max(np.abs(f.values - g.values)))


def restrict(f: GridFunction, grid: PeriodicGrid) -> GridFunction:
    """Sample ``f`` on a coarser grid whose nodes are a subset of its own."""
    if f.grid.n % grid.n or f.grid.dim != grid.dim:
        raise GridMismatch(f"cannot restrict {f.grid} to {grid}")
    stride = f.grid.n // grid.n
    index = tuple(slice(None, None, stride) for _ in range(grid.dim))
    return GridFunction(grid, f.values[index], f.name)
