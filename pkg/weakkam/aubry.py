"""Aubry sets, calibrated curves and constrained subsolutions."""
import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .exceptions import EmptyAubry, GradientBlowup
from .grid import GridFunction, gradient, interpolate
from .semigroup import SemigroupConfig, action_gap, residual_field, solve_stationary
from .utils import torus_distance, wrap

logger = logging.getLogger("weakkam.aubry")


@dataclass
class Trajectory:
    """Time-stamped phase curve.

    ``states`` rows are (x, p) when ``kind == "xp"`` and (x, v) when
    ``kind == "xv"``. Positions are stored on the universal cover.
    """

    times: np.ndarray
    states: np.ndarray
    kind: str = "xp"
    jacobians: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.kind not in ("xp", "xv"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("times and states lengths differ")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be increasing")

    @property
    def dim(self) -> int:
        return self.states.shape[1] // 2

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def positions(self) -> np.ndarray:
        return self.states[:, : self.dim]

    def velocities(self, model) -> np.ndarray:
        if self.kind == "xv":
            return self.states[:, self.dim:]
        return model.dh_dp(self.positions(), self.states[:, self.dim:])

    def index_of(self, t: float) -> int:
        """Sample index of time ``t``, which must lie on the sampling grid."""
        k = int(round((t - self.times[0]) / self.dt))
        if not 0 <= k < len(self.times):
            raise ValueError(f"time {t} outside [{self.times[0]}, {self.times[-1]}]")
        return k


@dataclass
class DiscreteMeasure:
    """Weighted atoms (x, v) in the tangent bundle."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.atoms.shape[0] != self.weights.shape[0]:
            raise ValueError("atoms and weights lengths differ")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")

    @property
    def dim(self) -> int:
        return self.atoms.shape[1] // 2

    def positions(self) -> np.ndarray:
        return self.atoms[:, : self.dim]

    def velocities(self) -> np.ndarray:
        return self.atoms[:, self.dim:]

    @classmethod
    def dirac(cls, x, v=None) -> "DiscreteMeasure":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v = np.zeros_like(x) if v is None else np.atleast_1d(np.asarray(v, dtype=float))
        return cls(np.concatenate([x, v])[None, :], np.ones(1))

    @classmethod
    def uniform(cls, atoms) -> "DiscreteMeasure":
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        return cls(atoms, np.full(len(atoms), 1.0 / len(atoms)))


class AubryPoint(NamedTuple):
    x: Tuple[float, ...]
    residual: float


class Cluster(NamedTuple):
    center: Tuple[float, ...]
    members: List[int]


def _characteristics(u: GridFunction, starts: np.ndarray, T: float, dt_curve: float, model,
                     scheme: str = "cubic"):
    """Integrate gamma' = H_p(gamma, du(gamma)) backward from ``starts``.

    Returns positions and velocities with shape (M + 1, K, dim) in
    increasing time order, plus a mask of starts whose gradient blew up.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    d = u.grid.dim
    grad = gradient(u)
    components = [GridFunction(u.grid, grad[..., k], f"du{k}") for k in range(d)]
    guard = 10.0 * model.p_bound
    blown = np.zeros(len(starts), dtype=bool)

    def velocity(x):
        p = np.stack([interpolate(g, x, scheme) for g in components], axis=-1)
        blown[np.linalg.norm(p, axis=-1) > guard] = True
        return model.dh_dp(x, p)

    m = int(round(T / dt_curve))
    x = np.array(starts, dtype=float).reshape(-1, d)
    xs, vs = [x], [velocity(x)]
    h = -dt_curve
    for _ in range(m):
        k1 = vs[-1]
        k2 = velocity(x + 0.5 * h * k1)
        k3 = velocity(x + 0.5 * h * k2)
        k4 = velocity(x + h * k3)
        x = x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        xs.append(x)
        vs.append(velocity(x))
    times = -dt_curve * np.arange(m, -1, -1)
    return times, np.stack(xs[::-1]), np.stack(vs[::-1]), blown


def backward_calibrated_curves(
    u_minus: GridFunction, starts, T: float, dt_curve: float, model, scheme: str = "cubic"
) -> List[Trajectory]:
    """Backward calibrated curves ending at each of ``starts`` at time 0."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    times, xs, vs, blown = _characteristics(u_minus, starts, T, dt_curve, model, scheme)
    if np.any(blown):
        raise GradientBlowup(
            f"gradient exceeds {10 * model.p_bound} along {int(blown.sum())} characteristics"
        )
    return [
        Trajectory(times, np.concatenate([xs[:, k], vs[:, k]], axis=1), kind="xv")
        for k in range(len(starts))
    ]


def backward_calibrated_curve(
    u_minus: GridFunction, x, T: float, dt_curve: float, model, scheme: str = "cubic"
) -> Trajectory:
    """Backward calibrated curve over [-T, 0] ending at ``x`` (RK4)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return backward_calibrated_curves(u_minus, x[None, :], T, dt_curve, model, scheme)[0]


def calibration_defect(u: GridFunction, curve: Trajectory, a: float, b: float, model) -> float:
    """int_a^b e^{lam t} L dt - [e^{lam b} u(gamma(b)) - e^{lam a} u(gamma(a))].

    Nonnegative (up to quadrature) for dominated ``u``, zero when the curve
    is calibrated on [a, b].
    """
    ia, ib = curve.index_of(a), curve.index_of(b)
    if ia > ib:
        raise ValueError("need a <= b")
    gap = action_gap(u, curve, model)
    return float(gap[ib] - gap[ia])


def cluster_points(points, radius: float) -> List[Cluster]:
    """Group torus points into connected clusters of linking distance ``radius``."""
    if len(points) == 0:
        return []
    wrapped = _fundamental(np.atleast_2d(np.asarray(points, dtype=float)))
    tree = cKDTree(wrapped, boxsize=1.0)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    n = len(wrapped)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    ncomp, labels = connected_components(graph, directed=False)
    clusters = []
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        angle = 2 * np.pi * wrapped[members]
        center = _fundamental(
            np.arctan2(np.sin(angle).mean(axis=0), np.cos(angle).mean(axis=0)) / (2 * np.pi)
        )
        clusters.append(Cluster(tuple(float(c_) for c_ in center), members.tolist()))
    clusters.sort(key=lambda cl: cl.members[0])
    return clusters


def aubry_candidates(
    u_minus: GridFunction, model, eps_res: float, T_recur: float, dt_curve: float = 1e-3
) -> List[AubryPoint]:
    """Grid nodes that look like projected Aubry points.

    A node passes when its residual is at most ``eps_res`` in absolute value
    and its backward calibrated curve stays within ``eps_res`` of the
    curve's own backward end point over [-T_recur, 0].
    """
    residual = residual_field(u_minus, model).values.ravel()
    nodes = u_minus.grid.points()
    flat = np.flatnonzero(np.abs(residual) <= eps_res)
    if flat.size == 0:
        raise EmptyAubry(f"no node has |residual| <= {eps_res}")
    _, xs, _, blown = _characteristics(u_minus, nodes[flat], T_recur, dt_curve, model)
    displacement = np.max(np.linalg.norm(xs - xs[0][None], axis=-1), axis=0)
    keep = (displacement <= eps_res) & ~blown
    if not np.any(keep):
        raise EmptyAubry(f"no node passes the recurrence filter at eps_res={eps_res}")
    points = [
        AubryPoint(tuple(float(c) for c in nodes[i]), float(residual[i])) for i in flat[keep]
    ]
    logger.info("Aubry filter kept %d of %d nodes", len(points), nodes.shape[0])
    return points


def aubry_mask(u_minus: GridFunction, points: Sequence[AubryPoint]) -> np.ndarray:
    """Boolean node mask (grid shape) of the given Aubry points."""
    mask = np.zeros(u_minus.grid.size, dtype=bool)
    if points:
        idx = np.rint(np.array([p.x for p in points]) * u_minus.grid.n).astype(int)
        idx = np.mod(idx, u_minus.grid.n)
        flat = np.ravel_multi_index(tuple(idx.T), u_minus.grid.shape)
        mask[flat] = True
    return mask.reshape(u_minus.grid.shape)


def constrained_residual(u: GridFunction, mu: DiscreteMeasure, model) -> float:
    """sum_i w_i (L(x_i, v_i) - lam u(x_i))."""
    L = model.lagrangian()
    x, v = mu.positions(), mu.velocities()
    values = L(x, v) - model.lam * interpolate(u, x)
    return float(np.sum(mu.weights * values))


def _smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _fundamental(points: np.ndarray) -> np.ndarray:
    out = wrap(np.asarray(points, dtype=float))
    out[out >= 1.0] = 0.0
    return out


class Bump:
    """V_bump(x) = height * smoothstep((dist(x, A) - eps) / radius)^2.

    Vanishes on the eps-neighborhood of the point set A and equals
    ``height`` beyond eps + radius.
    """

    def __init__(self, aubry_pts, height: float, radius: float, eps: float = 0.0):
        centers = np.atleast_2d(np.asarray(aubry_pts, dtype=float))
        self.dim = centers.shape[1]
        self.tree = cKDTree(_fundamental(centers), boxsize=1.0)
        self.height, self.radius, self.eps = height, radius, eps

    def distance(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dist, _ = self.tree.query(_fundamental(x.reshape(-1, self.dim)))
        return dist.reshape(x.shape[:-1])

    def __call__(self, x) -> np.ndarray:
        s = (self.distance(x) - self.eps) / self.radius
        return self.height * _smoothstep(s) ** 2


def bump_profile(
    x, aubry_pts, bump_height: float, bump_radius: float, eps: float = 0.0
) -> np.ndarray:
    """bump_height * smoothstep((dist(x, A) - eps) / bump_radius)^2."""
    return Bump(aubry_pts, bump_height, bump_radius, eps)(x)


def perturbation_subsolution(
    model,
    u_minus: GridFunction,
    aubry_pts,
    bump_height: float,
    bump_radius: float,
    cfg: SemigroupConfig,
    eps: float = None,
    tol: float = 1e-6,
    max_iters: int = 200000,
) -> Tuple[GridFunction, GridFunction]:
    """Strict subsolution away from the Aubry set.

    Solves the stationary problem for H + V_bump, where V_bump vanishes on
    the ``eps``-neighborhood of ``aubry_pts``, and returns the perturbed
    solution together with its residual for the unperturbed H. Away from
    the Aubry neighborhood that residual sits near -V_bump.
    """
    if bump_height < 0 or bump_radius <= 0:
        raise ValueError("need bump_height >= 0 and bump_radius > 0")
    eps = 0.25 * bump_radius if eps is None else eps
    if bump_height == 0:
        return u_minus.renamed("u_perturbed"), residual_field(u_minus, model).renamed("strictness")

    perturbed = model.perturbed(Bump(aubry_pts, bump_height, bump_radius, eps))
    u_tilde, report = solve_stationary(u_minus, cfg, perturbed, tol, max_iters)
    logger.info("Perturbed solve (height %g) took %d iterations", bump_height, report.iterations)
    strict = residual_field(u_tilde, model).renamed("strictness")
    return u_tilde.renamed("u_perturbed"), strict


def alpha_field(
    u_minus: GridFunction, model, centers, T: float, dt_curve: float = 1e-3
) -> GridFunction:
    """alpha(x) = u^-(z_x) with z_x the Aubry equilibrium reached backward from x.

    With a single equilibrium this is the constant u^-(x_0); with several it
    is piecewise constant on their backward basins.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    nodes = u_minus.grid.points()
    _, xs, _, _ = _characteristics(u_minus, nodes, T, dt_curve, model)
    ends = xs[0]
    nearest = np.argmin(torus_distance(ends[:, None, :], centers[None, :, :]), axis=1)
    levels = interpolate(u_minus, centers)
    return GridFunction(u_minus.grid, levels[nearest].reshape(u_minus.grid.shape), "alpha")


def entrance_time(curve: Trajectory, centers, radius: float) -> float:
    """Backward time after which the curve stays within ``radius`` of ``centers``.

    Returns ``inf`` when the curve is outside the neighborhood at its
    earliest sample.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    x = curve.positions()
    inside = np.min(torus_distance(x[:, None, :], centers[None, :, :]), axis=1) <= radius
    if not inside[0]:
        return float("inf")
    outside = np.flatnonzero(~inside)
    if outside.size == 0:
        return 0.0
    return float(-curve.times[outside[0] - 1])
