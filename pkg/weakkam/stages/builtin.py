"""Stages of the verification suite.

Each stage reads what it needs from the shared context, writes its
artifacts under the output directory and returns its contract records.
"""
import dataclasses
import logging
import math

import numpy as np

from .. import artifacts
from ..aubry import (
    Bump,
    DiscreteMeasure,
    backward_calibrated_curves,
    calibration_defect,
    cluster_points,
    constrained_residual,
    entrance_time,
    perturbation_subsolution,
)
from ..flow import (
    PhaseCloud,
    attractor_approximate,
    cloud_distance,
    conformal_volume_defect,
    flow_states,
    lyapunov_decay_check,
    lyapunov_values,
    sublevel_region,
    transport_measure,
    unstable_manifold,
)
from ..grid import second_difference_profile, usable_scales
from ..rate import run_rate_experiment
from ..semigroup import domination_check, refinement_study, regularity_report, residual_field
from ..suite import StageResult, check
from ..utils import torus_distance, wrap
from . import register_stage

logger = logging.getLogger("weakkam.stages")

MIN_REFINE_N = 8


def _max(values) -> float:
    return float(np.max(values))


@register_stage()
def solve(ctx) -> StageResult:
    cfg, model = ctx.cfg, ctx.model
    tol = cfg.tolerances
    u = ctx.u_minus
    residual = ctx.residual
    result = StageResult("solve", info=ctx.solve_report.to_dict())

    x = ctx.grid.points()
    constant_curve = model.lagrangian()(x, np.zeros_like(x)) / model.lam
    result.contracts["constant_curve_bound"] = check(
        _max(u.values.ravel() - constant_curve), tol.tol_sub
    )
    result.contracts["residual_max"] = check(_max(residual.values), tol.tol_sub)

    if cfg.preset.name != "shifted":
        V = model.potential(x)
        top = int(np.argmax(V))
        result.contracts["top_of_potential"] = check(
            abs(float(u.values.ravel()[top]) + float(V[top]) / model.lam), tol.tol_value
        )
        if not model.potential.modes:
            dt = ctx.sg.dt
            fixed = -model.potential.constant * dt / (2.0 * math.sinh(model.lam * dt / 2.0))
            result.contracts["fixed_point"] = check(
                _max(np.abs(u.values - fixed)), tol.tol_fix + cfg.semigroup.tol
            )

    # (n/4, 4 dt) against (n/2, 2 dt): same dt/h ratio as the main solve
    n_ref = max(MIN_REFINE_N, cfg.grid.n // 4)
    sg_ref = dataclasses.replace(ctx.sg, dt=ctx.sg.dt * cfg.grid.n / n_ref)
    study = refinement_study(
        n_ref, sg_ref, model, cfg.semigroup.tol, cfg.semigroup.max_iters, cfg.workers
    )
    result.info["refinement"] = study
    result.contracts["refinement_constant"] = check(study["constant"], tol.max_refine_constant)

    artifacts.write_grid(ctx.path("u_minus.csv"), u)
    artifacts.write_grid(ctx.path("residual.csv"), residual)
    result.artifacts += ["u_minus.csv", "residual.csv"]
    return result


@register_stage(requires=("solve",))
def regularize(ctx) -> StageResult:
    r, tol = ctx.cfg.regularize, ctx.cfg.tolerances
    u = ctx.u_minus
    w = ctx.u_reg
    report = regularity_report(w, u, ctx.aubry_mask, c_max=r.c_max, max_variation=r.max_variation)
    result = StageResult("regularize", info=report)
    result.contracts["order_excess"] = check(report["order_excess"], tol.tol_order)
    result.contracts["c_concave"] = check(max(report["c_concave"]), r.c_max)
    result.contracts["c_convex"] = check(max(report["c_convex"]), r.c_max)
    result.contracts["variation_concave"] = check(report["variation_concave"], r.max_variation)
    result.contracts["variation_convex"] = check(report["variation_convex"], r.max_variation)
    result.contracts["aubry_mismatch"] = check(report.get("aubry_mismatch"), tol.tol_aubry)
    result.contracts["residual_max"] = check(
        _max(residual_field(w, ctx.model).values), tol.tol_sub
    )

    if ctx.model.potential is not None and ctx.model.potential.modes:
        # u^- itself has a crease, so its convex constant blows up under refinement
        raw = second_difference_profile(u, usable_scales(u.grid))["convex"]
        growth = float(raw[0] / raw[-1]) if raw[-1] > 0 else math.inf
        result.contracts["raw_convex_growth"] = check(growth, 4.0, ">=")

    artifacts.write_grid(ctx.path("u_reg.csv"), w)
    result.artifacts.append("u_reg.csv")
    return result


def _perturbation(ctx, points, result: StageResult):
    cfg, a, tol = ctx.cfg, ctx.cfg.aubry, ctx.cfg.tolerances
    u = ctx.u_minus
    aubry_x = [p.x for p in points]
    u_tilde, strict = perturbation_subsolution(
        ctx.model, u, aubry_x, a.bump_height, a.bump_radius, ctx.sg,
        tol=cfg.semigroup.tol, max_iters=cfg.semigroup.max_iters,
    )
    bump = Bump(aubry_x, a.bump_height, a.bump_radius, 0.25 * a.bump_radius)
    nodes = ctx.grid.points()
    away = bump.distance(nodes) > bump.eps
    strictness = None
    if np.any(away):
        strictness = _max(strict.values.ravel()[away] + 0.5 * bump(nodes)[away])
    result.contracts["strictness"] = check(strictness, tol.tol_strict)
    diff = u_tilde.values - u.values
    result.contracts["perturbed_order"] = check(_max(diff), tol.tol_order)
    result.contracts["perturbation_size"] = check(
        _max(np.abs(diff)), a.bump_height / ctx.model.lam + tol.tol_semigroup
    )
    artifacts.write_grid(ctx.path("u_perturbed.csv"), u_tilde)
    result.artifacts.append("u_perturbed.csv")


def _transport(ctx, rest, result: StageResult):
    """Constrained residual of measures pushed one flow step forward.

    The measures are Dirac masses at rest points and, when the flow has
    equilibria, the empirical measures of late forward orbit samples.
    """
    model, flow, tol = ctx.model, ctx.cfg.flow, ctx.cfg.tolerances
    d = model.dim
    measures = [DiscreteMeasure.dirac(x) for x in rest]
    if ctx.equilibria:
        starts = np.concatenate(
            [ctx.rng.random((4, d)), ctx.rng.uniform(-flow.p_max, flow.p_max, (4, d))], axis=1
        )
        samples = flow_states(model, starts, flow.T_attractor, flow.dt, record=True)
        tail = samples[samples.shape[0] // 2:]
        for k in range(len(starts)):
            x, p = wrap(tail[:, k, :d]), tail[:, k, d:]
            measures.append(DiscreteMeasure.uniform(np.concatenate([x, model.dh_dp(x, p)], axis=1)))
    if not measures:
        return
    moved = [transport_measure(mu, model, flow.dt, flow.dt_jacobian) for mu in measures]
    values = [constrained_residual(ctx.u_minus, mu, model) for mu in moved]
    result.info["transported_residuals"] = values
    result.contracts["transported_residual"] = check(min(values), -tol.tol_dom, ">=")


@register_stage(requires=("solve",))
def aubry(ctx) -> StageResult:
    model, a, tol = ctx.model, ctx.cfg.aubry, ctx.cfg.tolerances
    u = ctx.u_minus
    points = ctx.aubry_points
    clusters = cluster_points([p.x for p in points], 2.0 * ctx.grid.h)
    centers = np.array([c.center for c in clusters])
    result = StageResult("aubry")
    result.info["clusters"] = [
        {"center": list(c.center), "size": len(c.members)} for c in clusters
    ]

    # equilibria within two cells of an Aubry cluster are Aubry equilibria
    rest = [np.array(eq.location[: model.dim]) for eq in ctx.equilibria]
    near = [np.min(torus_distance(x, centers)) <= 2.0 * ctx.grid.h for x in rest]
    on_aubry = [x for x, hit in zip(rest, near) if hit]
    if ctx.equilibria.continuum:
        on_aubry = list(centers)
    if on_aubry:
        dirac = [constrained_residual(u, DiscreteMeasure.dirac(x), model) for x in on_aubry]
        result.info["dirac_residuals"] = dirac
        result.contracts["dirac_residual"] = check(float(np.max(np.abs(dirac))), tol.tol_dirac)
    sinks = [
        x for x, eq, hit in zip(rest, ctx.equilibria, near)
        if eq.classification == "sink" and not hit
    ]
    if sinks:
        values = [constrained_residual(u, DiscreteMeasure.dirac(x), model) for x in sinks]
        result.info["sink_residuals"] = values
        result.contracts["off_aubry_sink_residual"] = check(
            min(values), tol.min_sink_residual, ">="
        )

    starts = ctx.rng.random((a.n_curves, model.dim))
    curves = backward_calibrated_curves(u, starts, a.T_recur, a.dt_curve, model)
    defects = [calibration_defect(u, c, -a.T_recur, 0.0, model) for c in curves]
    result.contracts["calibration_defect"] = check(float(np.max(np.abs(defects))), tol.tol_calib)
    violations = domination_check(u, curves, model, tol.tol_dom)
    result.contracts["domination_violations"] = check(len(violations), 0)

    entrance = [entrance_time(c, centers, a.bump_radius) for c in curves]
    if not all(math.isfinite(t) for t in entrance):
        logger.warning("%d calibrated curves never enter the Aubry neighborhood",
                       sum(not math.isfinite(t) for t in entrance))
    result.info["entrance_times"] = [t if math.isfinite(t) else None for t in entrance]

    _transport(ctx, list(centers) if ctx.equilibria.continuum else rest, result)
    if a.bump_height > 0:
        _perturbation(ctx, points, result)

    artifacts.write_json(
        ctx.path("aubry.json"),
        {
            "points": [{"x": list(p.x), "residual": p.residual} for p in points],
            "clusters": result.info["clusters"],
            "calibration_defects": defects,
            "domination_violations": violations,
            "entrance_times": result.info["entrance_times"],
        },
    )
    result.artifacts.append("aubry.json")
    for k, curve in enumerate(curves):
        name = f"curves/curve_{k:03d}.csv"
        artifacts.write_trajectory(ctx.path(name), curve)
        result.artifacts.append(name)
    return result


def _target(ctx) -> PhaseCloud:
    """Equilibria and unstable manifolds of saddles, or the zero section for a continuum."""
    model, flow = ctx.model, ctx.cfg.flow
    equilibria = ctx.equilibria
    if equilibria.continuum:
        x = ctx.grid.points()
        return PhaseCloud(np.concatenate([x, np.zeros_like(x)], axis=1))
    if not equilibria:
        return None
    parts = [np.array([eq.location for eq in equilibria])]
    for eq in equilibria:
        if eq.classification == "saddle":
            parts.append(unstable_manifold(model, eq, flow.T_attractor, flow.dt_jacobian).points)
    return PhaseCloud(np.concatenate(parts))


@register_stage(requires=("regularize",))
def attractor(ctx) -> StageResult:
    model, flow, tol = ctx.model, ctx.cfg.flow, ctx.cfg.tolerances
    h = ctx.grid.h
    w = ctx.u_reg
    result = StageResult("attractor")
    equilibria = ctx.equilibria
    artifacts.write_json(ctx.path("equilibria.json"), equilibria.to_dict())

    sigma = sublevel_region(w, model, flow.p_samples, slack=tol.tol_sub)
    half = attractor_approximate(sigma, model, flow.T_attractor / 2.0, flow.dt)
    full = attractor_approximate(half, model, flow.T_attractor / 2.0, flow.dt)
    result.info["cloud_size"] = len(sigma)

    # images nest iff the half-time image stays in the sublevel set
    slack = tol.tol_sub + tol.tol_lyap
    result.contracts["nesting"] = check(_max(lyapunov_values(w, model, half.points)), slack)
    later = attractor_approximate(full, model, 1.0, flow.dt)
    result.contracts["forward_invariance"] = check(cloud_distance(later, full), h)
    if equilibria:
        eq_cloud = PhaseCloud(np.array([eq.location for eq in equilibria]))
        result.contracts["contains_equilibria"] = check(cloud_distance(eq_cloud, full), 2.0 * h)
    target = _target(ctx)
    if target is not None:
        result.contracts["target_distance"] = check(cloud_distance(full, target), 2.0 * h)

    starts = np.concatenate(
        [ctx.rng.random((3, model.dim)), ctx.rng.uniform(-flow.p_max, flow.p_max, (3, model.dim))],
        axis=1,
    )
    defects = [conformal_volume_defect(model, z, 1.0, flow.dt_jacobian) for z in starts]
    result.info["conformal_volume"] = defects
    result.contracts["conformal_volume"] = check(max(d["defect"] for d in defects), tol.tol_fix)

    artifacts.write_cloud(ctx.path("sigma_cloud.csv"), sigma)
    artifacts.write_cloud(ctx.path("attractor_cloud.csv"), full)
    result.artifacts += ["equilibria.json", "sigma_cloud.csv", "attractor_cloud.csv"]
    return result


@register_stage(requires=("regularize",))
def lyapunov(ctx) -> StageResult:
    cfg, flow = ctx.cfg, ctx.cfg.flow
    report = lyapunov_decay_check(
        ctx.u_reg, ctx.model, flow.n_trajectories, flow.T_lyap, flow.dt, flow.p_max,
        seed=cfg.seed, tol_lyap=cfg.tolerances.tol_lyap,
    )
    result = StageResult("lyapunov", info=report)
    result.contracts["worst_margin"] = check(report["worst_margin"], report["tol_lyap"])
    result.contracts["violations"] = check(report["violations"], 0)
    return result


@register_stage(requires=("solve",))
def rate(ctx) -> StageResult:
    report = run_rate_experiment(ctx.cfg, ctx.model, u_minus=ctx.u_minus)
    result = StageResult("rate", info=report.to_dict())
    result.contracts["fitted_slope"] = check(report.fitted_slope, report.required_slope)
    result.contracts["crude_bound"] = check(report.crude_ok, True, ">=")
    artifacts.write_table(
        ctx.path("rate.csv"), ["t", "e_t", "crude"],
        zip(report.times, report.errors, report.crude_errors),
    )
    result.artifacts.append("rate.csv")
    return result
