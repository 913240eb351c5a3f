"""Discounted Lax-Oleinik semigroups on grid functions.

One backward step of length dt is the semi-Lagrangian minimization

    (T psi)(x) = min_v  e^{-lam dt} psi(x - dt v) + dt e^{-lam dt / 2} L(x - dt v / 2, v)

and the forward step is its mirror image with a maximum. The velocity is
searched on a coarse grid over [-v_bound, v_bound]^dim and refined by golden
section one axis at a time.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .exceptions import NotConverged, RegularityFailure, UnboundedAbove, UnboundedBelow
from .grid import (
    DEFAULT_SCALES,
    GridFunction,
    PeriodicGrid,
    envelope_interpolate,
    gradient,
    interpolate,
    restrict,
    scale_variation,
    second_difference_profile,
    sup_distance,
    usable_scales,
)
from .model import DiscountedHamiltonian, hamiltonian_vector_field
from .parallel import parallel_map
from .utils import golden_section

logger = logging.getLogger("weakkam.semigroup")

DIRECTIONS = ("backward", "forward")


@dataclass(frozen=True)
class SemigroupConfig:
    dt: float = 1e-2
    v_grid: int = 33
    refine_tol: float = 1e-8
    scheme: str = "cubic"
    refine: bool = True
    sweeps: int = 2

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.v_grid < 3 or self.v_grid % 2 == 0:
            raise ValueError(f"v_grid must be odd and >= 3, got {self.v_grid}")
        if not self.refine_tol > 0:
            raise ValueError("refine_tol must be positive")

    @classmethod
    def from_config(cls, cfg) -> "SemigroupConfig":
        sg = cfg.semigroup
        return cls(
            dt=sg.dt,
            v_grid=sg.v_grid,
            refine_tol=sg.refine_tol,
            scheme=sg.scheme,
            refine=sg.refine,
        )


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: List[float] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = False) -> Dict:
        out = {
            "iterations": self.iterations,
            "residual_history": self.residual_history,
            "converged": self.converged,
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out


def _step(
    psi: GridFunction, cfg: SemigroupConfig, model: DiscountedHamiltonian, direction: str
) -> GridFunction:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    grid = psi.grid
    d, lam, dt = grid.dim, model.lam, cfg.dt
    if d != model.dim:
        raise ValueError("grid and model dimensions differ")
    L = model.lagrangian()
    x = grid.points()
    backward = direction == "backward"
    sign = -1.0 if backward else 1.0
    a = math.exp(sign * lam * dt)
    b = dt * math.exp(sign * lam * dt / 2.0)

    # minimized objective; the forward step maximizes its negative
    def cost(v, xs=x):
        y = xs + sign * dt * v
        mid = xs + sign * dt * v / 2.0
        value = a * interpolate(psi, y, cfg.scheme)
        return (value if backward else -value) + b * L(mid, v)

    bound = model.v_bound
    axis = np.linspace(-bound, bound, cfg.v_grid)
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    coarse = cost(mesh[None, :, :], x[:, None, :])
    best_idx = np.argmin(coarse, axis=1)
    v_best = mesh[best_idx].copy()
    f_best = coarse[np.arange(len(x)), best_idx]

    if cfg.refine:
        step = axis[1] - axis[0]
        for _ in range(cfg.sweeps if d > 1 else 1):
            for k in range(d):
                lo = np.clip(v_best[:, k] - step, -bound, bound)
                hi = np.clip(v_best[:, k] + step, -bound, bound)

                def along(s, k=k, base=v_best.copy()):
                    v = base.copy()
                    v[:, k] = s
                    return cost(v)

                s_star, f_star = golden_section(along, lo, hi, cfg.refine_tol)
                better = f_star < f_best
                v_best[:, k] = np.where(better, s_star, v_best[:, k])
                f_best = np.where(better, f_star, f_best)

    edge = np.any(np.abs(v_best) >= bound - 10 * cfg.refine_tol, axis=-1)
    if np.any(edge):
        error = UnboundedBelow if backward else UnboundedAbove
        raise error(
            f"{int(np.sum(edge))} nodes minimize on the velocity box |v| = {bound}; "
            "increase v_bound"
        )
    values = f_best if backward else -f_best
    return GridFunction(grid, values.reshape(grid.shape), psi.name)


def backward_step(psi: GridFunction, cfg: SemigroupConfig, model) -> GridFunction:
    """One step of the discounted backward Lax-Oleinik operator."""
    return _step(psi, cfg, model, "backward")


def forward_step(psi: GridFunction, cfg: SemigroupConfig, model) -> GridFunction:
    """One step of the discounted forward Lax-Oleinik operator."""
    return _step(psi, cfg, model, "forward")


def iterate(
    psi: GridFunction, cfg: SemigroupConfig, model, direction: str = "backward"
) -> Iterator[GridFunction]:
    """Yield psi, T psi, T^2 psi, ... without end."""
    current = psi
    yield current
    while True:
        current = _step(current, cfg, model, direction)
        yield current


def n_steps(t_total: float, dt: float) -> int:
    m = int(round(t_total / dt))
    if m < 0:
        raise ValueError(f"negative evolution time {t_total}")
    return m


def evolve(
    psi: GridFunction, t_total: float, cfg: SemigroupConfig, model, direction: str = "backward"
) -> GridFunction:
    """m-fold composition of the one-step operator, m = round(t_total / dt)."""
    m = n_steps(t_total, cfg.dt)
    current = psi
    for k, current in enumerate(iterate(psi, cfg, model, direction)):
        if k == m:
            break
    logger.debug("Evolved %s %s over %d steps", psi.name, direction, m)
    return current


def _extremal_value(
    psi: GridFunction, x: np.ndarray, p: np.ndarray, tau: float, model, backward: bool,
    dt_flow: float,
) -> np.ndarray:
    """Objective of the extremal through (x, p) followed for time ``tau``.

    Forward: e^{lam tau} psi(gamma(tau)) - int_0^tau e^{lam r} L dr.
    Backward: e^{-lam tau} psi(gamma(-tau)) + int_0^tau e^{-lam r} L dr.
    Along an extremal L = p . H_p - H.
    """
    d, lam = model.dim, model.lam
    sign = -1.0 if backward else 1.0
    m = max(1, int(math.ceil(tau / dt_flow - 1e-9)))
    h = tau / m

    def rates(y, r):
        field_ = sign * hamiltonian_vector_field(model, y)
        xs, ps = y[..., :d], y[..., d:]
        lag = np.sum(ps * sign * field_[..., :d], axis=-1) - model(xs, ps)
        return field_, math.exp(sign * lam * r) * lag

    y = np.concatenate(np.broadcast_arrays(x, p), axis=-1)
    action = np.zeros(y.shape[:-1])
    for k in range(m):
        r = k * h
        k1, a1 = rates(y, r)
        k2, a2 = rates(y + 0.5 * h * k1, r + 0.5 * h)
        k3, a3 = rates(y + 0.5 * h * k2, r + 0.5 * h)
        k4, a4 = rates(y + h * k3, r + h)
        y = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        action = action + h * (a1 + 2 * a2 + 2 * a3 + a4) / 6.0
    end = envelope_interpolate(psi, y[..., :d], "upper" if backward else "lower")
    if backward:
        return math.exp(-lam * tau) * end + action
    return math.exp(lam * tau) * end - action


def lax_oleinik(
    psi: GridFunction,
    tau: float,
    cfg: SemigroupConfig,
    model,
    direction: str = "backward",
    dt_flow: float = 5e-3,
    chunk: int = 1 << 16,
) -> GridFunction:
    """T_tau^- psi or T_tau^+ psi in a single step along extremals.

    The initial momentum at each node is searched on a coarse grid over
    [-p_bound, p_bound]^dim and refined by golden section; the extremal and
    its action are integrated with RK4 of step at most ``dt_flow``. The
    forward operator reads psi through the lower envelope interpolant and
    the backward one through the upper envelope.

    Raises
    ------
    UnboundedBelow, UnboundedAbove
        when the optimal momentum sits on the p_bound box
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if not tau > 0 or not dt_flow > 0:
        raise ValueError(f"need tau > 0 and dt_flow > 0, got tau={tau}, dt_flow={dt_flow}")
    grid = psi.grid
    d = grid.dim
    if d != model.dim:
        raise ValueError("grid and model dimensions differ")
    backward = direction == "backward"
    x = grid.points()

    # minimized objective; the forward operator maximizes its negative
    def cost(p, xs=x):
        value = _extremal_value(psi, xs, p, tau, model, backward, dt_flow)
        return value if backward else -value

    bound = model.p_bound
    axis = np.linspace(-bound, bound, cfg.v_grid)
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    block = max(1, chunk // len(mesh))
    p_best = np.empty_like(x)
    f_best = np.empty(len(x))
    for start in range(0, len(x), block):
        rows = slice(start, start + block)
        coarse = cost(mesh[None, :, :], x[rows, None, :])
        idx = np.argmin(coarse, axis=1)
        p_best[rows] = mesh[idx]
        f_best[rows] = coarse[np.arange(len(idx)), idx]

    if cfg.refine:
        step = axis[1] - axis[0]
        for _ in range(cfg.sweeps if d > 1 else 1):
            for k in range(d):
                lo = np.clip(p_best[:, k] - step, -bound, bound)
                hi = np.clip(p_best[:, k] + step, -bound, bound)

                def along(s, k=k, base=p_best.copy()):
                    p = base.copy()
                    p[:, k] = s
                    return cost(p)

                s_star, f_star = golden_section(along, lo, hi, cfg.refine_tol)
                better = f_star < f_best
                p_best[:, k] = np.where(better, s_star, p_best[:, k])
                f_best = np.where(better, f_star, f_best)

    edge = np.any(np.abs(p_best) >= bound - 10 * cfg.refine_tol, axis=-1)
    if np.any(edge):
        error = UnboundedBelow if backward else UnboundedAbove
        raise error(
            f"{int(np.sum(edge))} nodes optimize on the momentum box |p| = {bound}; "
            "increase p_bound"
        )
    values = f_best if backward else -f_best
    logger.debug("Lax-Oleinik %s over tau=%g on %s", direction, tau, psi.name)
    return GridFunction(grid, values.reshape(grid.shape), psi.name)


def solve_stationary(
    psi0: GridFunction,
    cfg: SemigroupConfig,
    model,
    tol: float = 1e-6,
    max_iters: int = 200000,
):
    """Value iteration for the discounted stationary solution u^-.

    Iterates the backward step until sup |u_{k+1} - u_k| <= tol (1 - e^{-lam dt}),
    which bounds the distance to the discrete fixed point by ``tol``.

    Returns
    -------
    (u^-, SolveReport)
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    threshold = tol * (1.0 - math.exp(-model.lam * cfg.dt))
    report = SolveReport()
    start = time.perf_counter()
    previous = psi0
    for k, current in enumerate(iterate(psi0, cfg, model, "backward")):
        if k == 0:
            continue
        diff = sup_distance(current, previous)
        report.residual_history.append(diff)
        report.iterations = k
        previous = current
        if k % 1000 == 0:
            logger.debug("Iteration %d: sup increment %.3e", k, diff)
        if diff <= threshold:
            report.converged = True
            break
        if k >= max_iters:
            break
    report.wall_time = time.perf_counter() - start
    u_minus = previous.renamed("u_minus")
    if not report.converged:
        raise NotConverged(
            f"Stationary solve stopped after {report.iterations} iterations "
            f"(last increment {report.residual_history[-1]:.3e} > {threshold:.3e})",
            report=report,
        )
    logger.info(
        "Stationary solve converged in %d iterations (%.1fs)", report.iterations, report.wall_time
    )
    return u_minus, report


def residual_field(u: GridFunction, model: DiscountedHamiltonian) -> GridFunction:
    """Node-wise lam u(x) + H(x, du(x)) with central-difference du."""
    x = u.grid.points()
    p = gradient(u).reshape(-1, u.grid.dim)
    r = model.lam * u.values.ravel() + model(x, p)
    return GridFunction(u.grid, r.reshape(u.grid.shape), "residual")


def regularity_report(
    w: GridFunction,
    u_minus: GridFunction,
    aubry_mask: Optional[np.ndarray] = None,
    scales: Sequence[int] = DEFAULT_SCALES,
    c_max: float = 60.0,
    max_variation: float = 0.25,
) -> Dict:
    """Measured values of the regularization contracts."""
    profile = second_difference_profile(w, usable_scales(w.grid, scales))
    out = {
        "order_excess": float(np.max(w.values - u_minus.values)),
        "c_concave": profile["concave"].tolist(),
        "c_convex": profile["convex"].tolist(),
        "variation_concave": scale_variation(profile["concave"]),
        "variation_convex": scale_variation(profile["convex"]),
    }
    out["regular"] = bool(
        max(np.max(profile["concave"]), np.max(profile["convex"])) <= c_max
        and out["variation_concave"] <= max_variation
        and out["variation_convex"] <= max_variation
    )
    if aubry_mask is not None and np.any(aubry_mask):
        out["aubry_mismatch"] = float(np.max(np.abs(w.values - u_minus.values)[aubry_mask]))
    return out


def regularize(
    u_minus: GridFunction,
    t: float,
    s: float,
    cfg: SemigroupConfig,
    model,
    aubry_mask: Optional[np.ndarray] = None,
    tol_order: float = 5e-3,
    tol_aubry: float = 1e-3,
    c_max: float = 60.0,
    max_variation: float = 0.25,
    dt_flow: float = 5e-3,
) -> GridFunction:
    """Double Lax-Oleinik regularization T_s^- T_t^+ u^-.

    Each operator is one :func:`lax_oleinik` step. With s < t the result
    is a subsolution below u^- that agrees with it on the Aubry set and
    has bounded one-sided second differences on both sides; at s = t the
    composition gives u^- back, crease included.

    Raises
    ------
    RegularityFailure
        when the second-difference constants exceed ``c_max`` or vary by
        more than ``max_variation`` across scales
    """
    if not 0 < s < t <= 0.5:
        raise ValueError(f"need 0 < s < t <= 0.5, got s={s}, t={t}")
    lifted = lax_oleinik(u_minus, t, cfg, model, "forward", dt_flow)
    w = lax_oleinik(lifted, s, cfg, model, "backward", dt_flow).renamed("u_reg")
    report = regularity_report(w, u_minus, aubry_mask, c_max=c_max, max_variation=max_variation)
    if report["order_excess"] > tol_order:
        logger.warning("Regularized field exceeds u^- by %.3e", report["order_excess"])
    if report.get("aubry_mismatch", 0.0) > tol_aubry:
        logger.warning("Regularized field departs from u^- on Aubry nodes by %.3e",
                       report["aubry_mismatch"])
    if not report["regular"]:
        raise RegularityFailure(
            f"second differences not C^(1,1)-like: concave {report['c_concave']}, "
            f"convex {report['c_convex']}",
            report=report,
        )
    logger.info("Regularized with t=%g s=%g: C_concave=%.3g C_convex=%.3g",
                t, s, max(report["c_concave"]), max(report["c_convex"]))
    return w


def action_gap(u: GridFunction, curve, model, scheme: str = "cubic") -> np.ndarray:
    """G(t_j) = int_{t_0}^{t_j} e^{lam t} L dt - e^{lam t_j} u(gamma(t_j)).

    The domination defect on [t_i, t_j] is G(t_j) - G(t_i), so every
    sub-interval check reduces to differences of this array.
    """
    L = model.lagrangian()
    times = curve.times
    x = curve.positions()
    v = curve.velocities(model)
    weight = np.exp(model.lam * times)
    action = cumulative_trapezoid(weight * L(x, v), times, initial=0.0)
    return action - weight * interpolate(u, x, scheme)


def domination_check(
    u: GridFunction, curves: Sequence, model, tol_dom: float = 1e-3
) -> List[Dict]:
    """Sub-intervals [a, b] of sampled curves where domination fails.

    For each right end b the worst left end a < b is found with a running
    maximum, so all pairs are covered in linear time.
    """
    violations = []
    for index, curve in enumerate(curves):
        gap = action_gap(u, curve, model)
        running = np.maximum.accumulate(gap)
        argmax = np.zeros(len(gap), dtype=int)
        for j in range(1, len(gap)):
            argmax[j] = j if gap[j] >= gap[argmax[j - 1]] else argmax[j - 1]
        defect = gap[1:] - running[:-1]
        for j in np.flatnonzero(defect < -tol_dom) + 1:
            i = argmax[j - 1]
            violations.append(
                {
                    "curve": index,
                    "a": float(curve.times[i]),
                    "b": float(curve.times[j]),
                    "defect": float(gap[j] - gap[i]),
                }
            )
    if violations:
        logger.debug("Domination fails on %d sub-intervals", len(violations))
    return violations


def _solve_at(level, cfg: SemigroupConfig, model, tol, max_iters):
    n, dt = level
    grid = PeriodicGrid(n, model.dim)
    sub = SemigroupConfig(dt=dt, v_grid=cfg.v_grid, refine_tol=cfg.refine_tol,
                          scheme=cfg.scheme, refine=cfg.refine, sweeps=cfg.sweeps)
    u, _ = solve_stationary(GridFunction.constant(grid, 0.0), sub, model, tol, max_iters)
    return u


def solve_levels(
    levels: Sequence, cfg: SemigroupConfig, model, tol: float = 1e-6,
    max_iters: int = 200000, workers: int = 1,
) -> List[GridFunction]:
    """Stationary solutions from psi = 0 at each (n, dt) level, in input order."""
    func = partial(_solve_at, cfg=cfg, model=model, tol=tol, max_iters=max_iters)
    return parallel_map(func, [tuple(level) for level in levels], workers)


def refinement_study(
    n: int,
    cfg: SemigroupConfig,
    model,
    tol: float = 1e-6,
    max_iters: int = 200000,
    workers: int = 1,
) -> Dict:
    """Compare u^- at (n, dt) and (2n, dt / 2) on the coarse nodes.

    The two solves are independent and run concurrently when ``workers > 1``.
    """
    levels = [(n, cfg.dt), (2 * n, cfg.dt / 2.0)]
    coarse, fine = solve_levels(levels, cfg, model, tol, max_iters, workers)
    distance = sup_distance(coarse, restrict(fine, coarse.grid))
    scale = cfg.dt + coarse.grid.h
    out = {"n": n, "dt": cfg.dt, "distance": distance, "constant": distance / scale}
    logger.info("Refinement (n=%d, dt=%g): sup distance %.3e, C=%.3g",
                n, cfg.dt, distance, out["constant"])
    return out
