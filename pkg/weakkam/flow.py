"""Discounted Hamiltonian flow: integration, equilibria and attractors.

The phase field is X(x, p) = (H_p, -H_x - lam p); its divergence is
-dim * lam, so phase volume contracts by e^{-dim lam t}.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import root
from scipy.spatial import cKDTree

from .aubry import DiscreteMeasure, Trajectory
from .exceptions import EmptyRegion, Escape
from .grid import GridFunction, interpolate
from .model import hamiltonian_vector_field, vector_field_jacobian
from .utils import torus_distance, wrap

logger = logging.getLogger("weakkam.flow")

MAX_DT = 1e-2
CLASSES = ("saddle", "sink", "source", "center-like")


@dataclass
class PhaseCloud:
    """Finite sample of a phase-space region; rows are (x, p)."""

    points: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if not np.all(np.isfinite(self.points)):
            raise ValueError("phase cloud has non-finite points")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1] // 2

    def positions(self) -> np.ndarray:
        return self.points[:, : self.dim]

    def momenta(self) -> np.ndarray:
        return self.points[:, self.dim:]


@dataclass
class EquilibriumInfo:
    location: Tuple[float, ...]
    eigenvalues: np.ndarray
    mu_min_positive: Optional[float]
    classification: str

    @property
    def hyperbolic(self) -> bool:
        return self.classification != "center-like"

    def to_dict(self) -> Dict:
        return {
            "location": list(self.location),
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "mu_min_positive": self.mu_min_positive,
            "classification": self.classification,
        }


class EquilibriumList(list):
    """List of equilibria; ``continuum`` flags a non-isolated equilibrium set."""

    def __init__(self, items=(), continuum: bool = False):
        super().__init__(items)
        self.continuum = continuum

    def to_dict(self) -> Dict:
        return {"continuum": self.continuum, "equilibria": [e.to_dict() for e in self]}


def _guard(model, states: np.ndarray):
    p = states[..., model.dim:]
    limit = 10.0 * model.p_bound
    if not np.all(np.isfinite(states)) or np.any(np.linalg.norm(p, axis=-1) > limit):
        raise Escape(f"momentum left the guard |p| <= {limit}")


def _rk4(model, y: np.ndarray, h: float) -> np.ndarray:
    k1 = hamiltonian_vector_field(model, y)
    k2 = hamiltonian_vector_field(model, y + 0.5 * h * k1)
    k3 = hamiltonian_vector_field(model, y + 0.5 * h * k2)
    k4 = hamiltonian_vector_field(model, y + h * k3)
    return y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _rk4_variational(model, y: np.ndarray, J: np.ndarray, h: float):
    def rhs(y_, J_):
        return hamiltonian_vector_field(model, y_), vector_field_jacobian(model, y_) @ J_

    k1y, k1J = rhs(y, J)
    k2y, k2J = rhs(y + 0.5 * h * k1y, J + 0.5 * h * k1J)
    k3y, k3J = rhs(y + 0.5 * h * k2y, J + 0.5 * h * k2J)
    k4y, k4J = rhs(y + h * k3y, J + h * k3J)
    return (
        y + h * (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0,
        J + h * (k1J + 2 * k2J + 2 * k3J + k4J) / 6.0,
    )


def _schedule(T: float, dt: float) -> Tuple[int, float]:
    if T < 0:
        raise ValueError(f"negative flow time {T}")
    if not 0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    m = int(math.ceil(T / dt - 1e-9))
    return m, (T / m if m else dt)


def flow_states(model, states, T: float, dt: float, record: bool = False):
    """Flow a batch of phase points forward by ``T`` with fixed-step RK4.

    Returns the final states, or all samples with shape (m + 1, K, 2 dim)
    when ``record`` is set.
    """
    y = np.atleast_2d(np.asarray(states, dtype=float))
    m, h = _schedule(T, dt)
    _guard(model, y)
    samples = [y] if record else None
    for _ in range(m):
        y = _rk4(model, y, h)
        _guard(model, y)
        if record:
            samples.append(y)
    return np.stack(samples) if record else y


def integrate(model, state, T: float, dt: float, with_jacobian: bool = False) -> Trajectory:
    """RK4 trajectory of the discounted flow over [0, T].

    With ``with_jacobian`` the variational equation dJ/dt = DX J, J(0) = I,
    is integrated alongside and stored per sample.
    """
    y = np.asarray(state, dtype=float).reshape(1, -1)
    if y.shape[1] != 2 * model.dim:
        raise ValueError(f"state must have length {2 * model.dim}")
    m, h = _schedule(T, dt)
    times = h * np.arange(m + 1)
    if not with_jacobian:
        return Trajectory(times, flow_states(model, y, T, dt, record=True)[:, 0], kind="xp")
    J = np.eye(2 * model.dim)[None]
    ys, Js = [y[0]], [J[0]]
    _guard(model, y)
    for _ in range(m):
        y, J = _rk4_variational(model, y, J, h)
        _guard(model, y)
        ys.append(y[0])
        Js.append(J[0])
    return Trajectory(times, np.stack(ys), kind="xp", jacobians=np.stack(Js))


def linearize(model, state, tol: float = 1e-9) -> EquilibriumInfo:
    """Eigen-data of the phase field Jacobian at ``state``."""
    state = np.asarray(state, dtype=float)
    eig = np.linalg.eigvals(vector_field_jacobian(model, state))
    eig = eig[np.lexsort((eig.imag, eig.real))]
    scale = tol * max(1.0, float(np.max(np.abs(eig))))
    positive = eig.real[eig.real > scale]
    if np.all(eig.real < -scale):
        kind = "sink"
    elif np.all(eig.real > scale):
        kind = "source"
    elif np.any(eig.real > scale) and np.any(eig.real < -scale):
        kind = "saddle"
    else:
        kind = "center-like"
    return EquilibriumInfo(
        location=tuple(float(c) for c in state),
        eigenvalues=eig,
        mu_min_positive=float(np.min(positive)) if positive.size else None,
        classification=kind,
    )


def equilibria_find(
    model, seeds_per_axis: int, dedupe: float = 1e-8, field_tol: float = 1e-9
) -> EquilibriumList:
    """Zeros of the discounted phase field found by Newton-type root solves.

    Seeds are (x, 0) with x on a uniform grid of ``seeds_per_axis`` points
    per axis. When every converged seed is its own degenerate zero the
    equilibrium set is a continuum and the result is empty with
    ``continuum`` set.
    """
    if seeds_per_axis < 8:
        raise ValueError(f"need at least 8 seeds per axis, got {seeds_per_axis}")
    d = model.dim
    axis = np.arange(seeds_per_axis) / seeds_per_axis
    seeds = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)

    def fun(z):
        return hamiltonian_vector_field(model, z)

    def jac(z):
        return vector_field_jacobian(model, z)

    found, degenerate = [], []
    for x0 in seeds:
        z = np.concatenate([x0, np.zeros(d)])
        if np.max(np.abs(fun(z))) > field_tol:
            sol = root(fun, z, jac=jac, method="hybr", tol=1e-13)
            if not sol.success or np.max(np.abs(fun(sol.x))) > field_tol:
                continue
            z = sol.x.copy()
        z[:d] = wrap(z[:d])
        z[:d][z[:d] >= 1.0 - dedupe] = 0.0
        found.append(z)
        degenerate.append(abs(np.linalg.det(jac(z))) < 1e-8)

    unique: List[np.ndarray] = []
    for z in found:
        if not any(
            torus_distance(z[:d], u[:d]) <= dedupe and np.max(np.abs(z[d:] - u[d:])) <= dedupe
            for u in unique
        ):
            unique.append(z)

    if len(found) > 1 and all(degenerate) and len(unique) == len(found):
        logger.info("Equilibria of %s form a continuum", model.name)
        return EquilibriumList(continuum=True)

    unique.sort(key=lambda z: tuple(np.round(z, 9)))
    result = EquilibriumList(linearize(model, z) for z in unique)
    logger.info(
        "Found %d equilibria: %s", len(result), ", ".join(e.classification for e in result)
    )
    return result


def sublevel_region(
    u: GridFunction, model, p_samples: int, slack: float = 1e-12
) -> PhaseCloud:
    """Phase points over the grid nodes with lam u(x) + H(x, p) <= slack.

    Momenta are sampled on a uniform grid of ``p_samples`` points per axis
    over [-p_bound, p_bound]; use an odd count so that p = 0 is included.
    """
    if p_samples < 2:
        raise ValueError("p_samples must be >= 2")
    d = model.dim
    axis = np.linspace(-model.p_bound, model.p_bound, p_samples)
    pmesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    x = u.grid.points()
    F = model.lam * u.values.ravel()[:, None] + model(x[:, None, :], pmesh[None, :, :])
    keep = F <= slack
    if not np.any(keep):
        raise EmptyRegion("no sampled phase point satisfies lam u + H <= 0")
    node, pk = np.nonzero(keep)
    points = np.concatenate([x[node], pmesh[pk]], axis=1)
    logger.info("Sublevel region: %d of %d phase samples", len(points), keep.size)
    return PhaseCloud(points, 0.0)


def attractor_approximate(cloud: PhaseCloud, model, T: float, dt: float) -> PhaseCloud:
    """Forward image of ``cloud`` under the flow at time T, positions wrapped."""
    y = flow_states(model, cloud.points, T, dt)
    y[:, : model.dim] = wrap(y[:, : model.dim])
    return PhaseCloud(y, cloud.timestamp + T)


def lyapunov_values(u: GridFunction, model, states) -> np.ndarray:
    """F_u(x, p) = lam u(x) + H(x, p)."""
    states = np.asarray(states, dtype=float)
    x, p = states[..., : model.dim], states[..., model.dim:]
    return model.lam * interpolate(u, x) + model(x, p)


def lyapunov_decay_check(
    u: GridFunction,
    model,
    n_trajectories: int,
    T: float,
    dt: float = 1e-2,
    p_max: float = 2.0,
    seed: int = 0,
    tol_lyap: float = 1e-3,
    starts=None,
) -> Dict:
    """Check F_u(phi_t(z)) <= e^{-lam t} F_u(z) + tol_lyap along random orbits."""
    d = model.dim
    if starts is None:
        rng = np.random.default_rng(seed)
        x0 = rng.random((n_trajectories, d))
        p0 = rng.uniform(-p_max, p_max, size=(n_trajectories, d))
        starts = np.concatenate([x0, p0], axis=1)
    samples = flow_states(model, starts, T, dt, record=True)
    m = samples.shape[0] - 1
    times = (T / m if m else 0.0) * np.arange(m + 1)
    F = lyapunov_values(u, model, samples)
    decay = np.exp(-model.lam * times)[:, None]
    margin = F - decay * F[0][None, :]
    worst = float(np.max(margin))
    violations = int(np.sum(np.any(margin > tol_lyap, axis=0)))
    report = {
        "n_trajectories": int(samples.shape[1]),
        "T": float(T),
        "worst_margin": worst,
        "violations": violations,
        "tol_lyap": tol_lyap,
        "passed": violations == 0,
    }
    logger.info("Lyapunov check: %d violations, worst margin %.3e", violations, worst)
    return report


def conformal_volume_defect(model, state, T: float = 1.0, dt: float = 1e-3) -> Dict:
    """Compare det D phi_T at ``state`` with e^{-dim lam T}."""
    traj = integrate(model, state, T, dt, with_jacobian=True)
    det = float(np.linalg.det(traj.jacobians[-1]))
    expected = math.exp(-model.dim * model.lam * T)
    return {"det": det, "expected": expected, "defect": abs(det - expected)}


def transport_measure(mu: DiscreteMeasure, model, t: float, dt: float = 1e-3) -> DiscreteMeasure:
    """Push ``mu`` forward by the discounted Euler-Lagrange flow for time t."""
    d = model.dim
    x, v = mu.positions(), mu.velocities()
    p = model.lagrangian().legendre_map(x, v)
    y = flow_states(model, np.concatenate([x, p], axis=1), t, dt)
    x1, p1 = y[:, :d], y[:, d:]
    v1 = model.dh_dp(x1, p1)
    return DiscreteMeasure(np.concatenate([wrap(x1), v1], axis=1), mu.weights)


def unstable_manifold(
    model, equilibrium: EquilibriumInfo, T: float, dt: float = 1e-3, eps: float = 1e-6
) -> PhaseCloud:
    """Sampled branches of the unstable manifold of ``equilibrium``.

    Each real unstable eigenvector seeds two branches at distance ``eps``.
    """
    z = np.asarray(equilibrium.location, dtype=float)
    values, vectors = np.linalg.eig(vector_field_jacobian(model, z))
    starts = []
    for k in np.argsort(values.real):
        if values[k].real > 1e-9 and abs(values[k].imag) < 1e-12:
            e = np.real(vectors[:, k])
            e /= np.linalg.norm(e)
            starts.extend([z + eps * e, z - eps * e])
    if not starts:
        return PhaseCloud(z[None, :], T)
    samples = flow_states(model, np.array(starts), T, dt, record=True)
    points = samples.reshape(-1, 2 * model.dim)
    points[:, : model.dim] = wrap(points[:, : model.dim])
    return PhaseCloud(points, T)


def _lifted_copies(points: np.ndarray, dim: int) -> np.ndarray:
    shifts = np.stack(np.meshgrid(*([[-1.0, 0.0, 1.0]] * dim), indexing="ij"), axis=-1)
    shifts = shifts.reshape(-1, dim)
    copies = []
    for s in shifts:
        c = points.copy()
        c[:, :dim] += s
        copies.append(c)
    return np.concatenate(copies)


def cloud_distance(cloud: PhaseCloud, target: PhaseCloud) -> float:
    """One-sided Hausdorff distance sup_{a in cloud} min_{b in target} |a - b|.

    Positions are compared on the torus, momenta in the plane.
    """
    d = cloud.dim
    a = cloud.points.copy()
    a[:, :d] = wrap(a[:, :d])
    b = target.points.copy()
    b[:, :d] = wrap(b[:, :d])
    tree = cKDTree(_lifted_copies(b, d))
    dist, _ = tree.query(a)
    return float(np.max(dist))

