"""Exponential convergence rate of T_t^- 0 towards u^- - e^{-lam t} alpha."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import linregress

from .aubry import aubry_candidates, alpha_field, cluster_points
from .exceptions import FloorDominates, HypothesisViolation
from .flow import equilibria_find
from .grid import GridFunction, PeriodicGrid, restrict, sup_distance
from .model import build_model
from .semigroup import SemigroupConfig, iterate, n_steps, solve_levels
from .utils import torus_distance

logger = logging.getLogger("weakkam.rate")

ALPHA_MODES = ("single", "piecewise")


@dataclass
class RateReport:
    times: List[float]
    errors: List[float]
    alpha: float
    mu: float
    fitted_slope: float
    fit_window: Tuple[float, float]
    floor: float
    lam: float = 0.0
    crude_errors: List[float] = field(default_factory=list)
    crude_ok: bool = True
    alpha_levels: List[float] = field(default_factory=list)
    n_fit: int = 0

    @property
    def required_slope(self) -> float:
        return -0.9 * (self.mu + self.lam)

    @property
    def passed(self) -> bool:
        return self.fitted_slope <= self.required_slope and self.crude_ok

    def rows(self):
        return [(t, e) for t, e in zip(self.times, self.errors)]

    def to_dict(self) -> Dict:
        return {
            "alpha": self.alpha,
            "alpha_levels": self.alpha_levels,
            "mu": self.mu,
            "lambda": self.lam,
            "fitted_slope": self.fitted_slope,
            "required_slope": self.required_slope,
            "fit_window": list(self.fit_window),
            "n_fit": self.n_fit,
            "floor": self.floor,
            "crude_ok": self.crude_ok,
            "passed": self.passed,
        }


def _aubry_equilibria(u_minus, model, cfg, equilibria):
    """Hyperbolic equilibria under the Aubry clusters, one per cluster."""
    h = u_minus.grid.h
    points = aubry_candidates(
        u_minus, model, cfg.aubry.eps_res, cfg.aubry.T_recur, cfg.aubry.dt_curve
    )
    clusters = cluster_points([p.x for p in points], 2.0 * h)
    if len(clusters) > 1 and cfg.rate.alpha_mode != "piecewise":
        raise HypothesisViolation(f"Aubry set splits into {len(clusters)} clusters")
    matched = []
    for cluster in clusters:
        center = np.array(cluster.center)
        best, dist = None, math.inf
        for eq in equilibria:
            x = np.array(eq.location[: model.dim])
            p = np.array(eq.location[model.dim:])
            d = float(torus_distance(center, x))
            if np.max(np.abs(p)) < 1e-6 and d < dist:
                best, dist = eq, d
        if best is None or dist > 2.0 * h + cfg.aubry.eps_res:
            raise HypothesisViolation(f"no equilibrium under the Aubry cluster at {cluster.center}")
        if best.mu_min_positive is None or not best.hyperbolic:
            raise HypothesisViolation(f"Aubry equilibrium at {best.location} is not hyperbolic")
        matched.append(best)
    return matched


def run_rate_experiment(
    cfg,
    model=None,
    u_minus: Optional[GridFunction] = None,
    floor: Optional[float] = None,
    workers: Optional[int] = None,
) -> RateReport:
    """Evolve psi = 0 and fit the exponential decay of the corrected error.

    ``u_minus`` and ``floor`` may be passed in when a previous stage already
    computed them; otherwise u^- at (n, dt) and at (n / 2, 2 dt) are solved
    concurrently and the floor is their distance on the coarse nodes.
    """
    if cfg.rate.alpha_mode not in ALPHA_MODES:
        raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
    model = model or build_model(cfg)
    sg = SemigroupConfig.from_config(cfg)
    workers = cfg.workers if workers is None else workers
    grid = PeriodicGrid(cfg.grid.n, model.dim)

    equilibria = equilibria_find(model, cfg.flow.seeds_per_axis)
    if equilibria.continuum:
        raise HypothesisViolation("equilibria form a continuum")

    tol, max_iters = cfg.semigroup.tol, cfg.semigroup.max_iters
    if u_minus is None or floor is None:
        levels = [(grid.n, sg.dt), (grid.n // 2, 2.0 * sg.dt)]
        if u_minus is not None:
            levels = levels[1:]
        solved = solve_levels(levels, sg, model, tol, max_iters, workers)
        u_minus = u_minus if u_minus is not None else solved[0]
        coarse = solved[-1]
        floor = sup_distance(restrict(u_minus, coarse.grid), coarse)

    matched = _aubry_equilibria(u_minus, model, cfg, equilibria)
    mu = min(eq.mu_min_positive for eq in matched)
    centers = np.array([eq.location[: model.dim] for eq in matched])
    if len(matched) == 1:
        alpha = GridFunction.constant(grid, float(u_minus(centers)[0]), "alpha")
    else:
        alpha = alpha_field(u_minus, model, centers, cfg.aubry.T_recur, cfg.aubry.dt_curve)
    alpha_levels = sorted(set(float(a) for a in np.unique(alpha.values)))

    lam = model.lam
    m = n_steps(cfg.rate.T, sg.dt)
    stride = cfg.rate.stride
    times, errors, crude = [], [], []
    for k, psi in enumerate(iterate(GridFunction.constant(grid, 0.0), sg, model)):
        if k % stride == 0:
            t = k * sg.dt
            diff = psi.values - u_minus.values
            times.append(t)
            errors.append(float(np.max(np.abs(diff + math.exp(-lam * t) * alpha.values))))
            crude.append(float(np.max(np.abs(diff))))
        if k >= m:
            break
        if k % 1000 == 0:
            logger.debug("Rate experiment at step %d of %d", k, m)

    times_a, errors_a = np.array(times), np.array(errors)
    t_lo = 2.0 / (mu + lam)
    below = np.flatnonzero(errors_a < 10.0 * floor)
    t_hi = float(times_a[below[0]]) if below.size else float(times_a[-1]) + sg.dt
    window = (times_a >= t_lo) & (times_a < t_hi) & (errors_a > 0)
    n_fit = int(np.sum(window))
    if n_fit < 3:
        raise FloorDominates(
            f"only {n_fit} samples between t={t_lo:.3g} and the floor crossing at t={t_hi:.3g}"
        )
    fit = linregress(times_a[window], np.log(errors_a[window]))

    crude_ok = all(
        e <= math.exp(-lam * t) * crude[0] + cfg.tolerances.tol_semigroup
        for t, e in zip(times, crude)
    )
    report = RateReport(
        times=times,
        errors=errors,
        alpha=alpha_levels[0] if len(alpha_levels) == 1 else float(u_minus(centers[:1])[0]),
        mu=float(mu),
        fitted_slope=float(fit.slope),
        fit_window=(float(t_lo), float(t_hi)),
        floor=float(floor),
        lam=lam,
        crude_errors=crude,
        crude_ok=crude_ok,
        alpha_levels=alpha_levels,
        n_fit=n_fit,
    )
    logger.info(
        "Rate: slope %.4g (required <= %.4g) over [%.3g, %.3g], floor %.3e",
        report.fitted_slope, report.required_slope, t_lo, t_hi, floor,
    )
    return report
