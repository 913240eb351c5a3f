import math

import numpy as np
import pytest

from weakkam.aubry import Trajectory
from weakkam.exceptions import NotConverged, RegularityFailure, UnboundedBelow
from weakkam.grid import (
    GridFunction,
    PeriodicGrid,
    second_difference_profile,
    sup_distance,
    usable_scales,
)
from weakkam.semigroup import (
    SemigroupConfig,
    action_gap,
    backward_step,
    domination_check,
    evolve,
    forward_step,
    iterate,
    lax_oleinik,
    n_steps,
    refinement_study,
    regularity_report,
    regularize,
    residual_field,
    solve_levels,
    solve_stationary,
)

# piecewise-linear interpolation on the coarse velocity grid keeps the
# discrete operator exactly monotone and contracting
EXACT = SemigroupConfig(dt=1e-2, scheme="linear", refine=False)


def wave(grid, amplitude=0.1, shift=0.0):
    return GridFunction.from_function(
        grid, lambda x: amplitude * np.sin(2 * np.pi * (x[:, 0] + shift))
    )


def test_semigroup_config_validation(make_config):
    with pytest.raises(ValueError):
        SemigroupConfig(dt=0.0)
    with pytest.raises(ValueError):
        SemigroupConfig(v_grid=32)
    cfg = SemigroupConfig.from_config(make_config(semigroup={"dt": 5e-3, "scheme": "linear"}))
    assert cfg.dt == 5e-3
    assert cfg.scheme == "linear"


def test_free_zero_is_fixed(free):
    zero = GridFunction.constant(PeriodicGrid(16), 0.0)
    assert backward_step(zero, EXACT, free).sup_norm == 0.0
    assert forward_step(zero, EXACT, free).sup_norm == 0.0
    u, report = solve_stationary(zero, EXACT, free)
    assert report.converged
    assert report.iterations == 1
    assert u.name == "u_minus"


def test_constant_potential_fixed_point(constant):
    cfg = SemigroupConfig(dt=1e-2)
    zero = GridFunction.constant(PeriodicGrid(16), 0.0)
    u, report = solve_stationary(zero, cfg, constant, tol=1e-8)
    fixed = -cfg.dt / (2 * math.sinh(constant.lam * cfg.dt / 2))
    np.testing.assert_allclose(u.values, fixed, atol=1e-8)
    assert fixed == pytest.approx(-1 / constant.lam, abs=1e-4)
    assert "wall_time" not in report.to_dict()
    assert report.to_dict(include_timing=True)["wall_time"] >= 0


def test_monotone_and_contracting(cosine, rng):
    grid = PeriodicGrid(32)
    low = wave(grid)
    high = low + 0.05 * rng.random(grid.shape)
    t_low, t_high = backward_step(low, EXACT, cosine), backward_step(high, EXACT, cosine)
    assert np.all(t_high.values >= t_low.values - 1e-12)
    factor = math.exp(-cosine.lam * EXACT.dt)
    assert sup_distance(t_high, t_low) <= factor * sup_distance(high, low) + 1e-12
    f_low, f_high = forward_step(low, EXACT, cosine), forward_step(high, EXACT, cosine)
    assert np.all(f_high.values >= f_low.values - 1e-12)


def test_constants_commute(cosine):
    psi = wave(PeriodicGrid(32))
    shifted = backward_step(psi + 0.3, EXACT, cosine)
    expected = backward_step(psi, EXACT, cosine) + 0.3 * math.exp(-cosine.lam * EXACT.dt)
    np.testing.assert_allclose(shifted.values, expected.values, atol=1e-12)


def test_contraction_over_random_pairs(cosine, rng):
    grid = PeriodicGrid(32)
    factor = math.exp(-cosine.lam * 0.05)
    for _ in range(100):
        psi = GridFunction(grid, rng.uniform(-0.1, 0.1, grid.shape))
        phi = GridFunction(grid, rng.uniform(-0.1, 0.1, grid.shape))
        t_psi, t_phi = evolve(psi, 0.05, EXACT, cosine), evolve(phi, 0.05, EXACT, cosine)
        assert sup_distance(t_psi, t_phi) <= factor * sup_distance(psi, phi) + 1e-12
        upper = psi + GridFunction(grid, rng.uniform(0.0, 0.05, grid.shape))
        assert np.all(evolve(upper, 0.05, EXACT, cosine).values >= t_psi.values)


def test_semigroup_property(cosine):
    psi = wave(PeriodicGrid(16))
    cfg = SemigroupConfig(dt=2e-2)
    once = evolve(psi, 0.1, cfg, cosine)
    twice = evolve(evolve(psi, 0.04, cfg, cosine), 0.06, cfg, cosine)
    np.testing.assert_array_equal(once.values, twice.values)
    assert evolve(psi, 0.0, cfg, cosine) is psi


@pytest.mark.parametrize("amplitude", [0.0, 1.0])
def test_semigroup_law_across_step_sizes(cosine, amplitude):
    # T_{t+s} = T_t T_s with the inner half taken at half the step
    psi = wave(PeriodicGrid(256), amplitude=amplitude)
    cfg = SemigroupConfig(dt=1e-2)
    half = SemigroupConfig(dt=5e-3)
    once = evolve(psi, 0.5, cfg, cosine)
    twice = evolve(evolve(psi, 0.25, half, cosine), 0.25, cfg, cosine)
    assert sup_distance(once, twice) <= 5e-3
    assert sup_distance(once, psi) > 0.1


def test_iterate_and_n_steps(free):
    psi = GridFunction.constant(PeriodicGrid(8), 1.0)
    steps = iterate(psi, EXACT, free)
    assert next(steps) is psi
    assert next(steps).values[0] == pytest.approx(math.exp(-free.lam * EXACT.dt))
    assert n_steps(0.1, 1e-2) == 10
    with pytest.raises(ValueError):
        n_steps(-1.0, 1e-2)


def test_steep_data_hits_velocity_box(cosine):
    grid = PeriodicGrid(32)
    steep = wave(grid, amplitude=50.0)
    with pytest.raises(UnboundedBelow):
        backward_step(steep, SemigroupConfig(dt=1e-2, v_grid=5), cosine)


def test_solve_stationary_not_converged(cosine):
    zero = GridFunction.constant(PeriodicGrid(16), 0.0)
    with pytest.raises(NotConverged) as err:
        solve_stationary(zero, SemigroupConfig(dt=1e-2), cosine, tol=1e-8, max_iters=3)
    assert err.value.report.iterations == 3
    assert not err.value.report.converged
    with pytest.raises(ValueError):
        solve_stationary(zero, SemigroupConfig(dt=1e-2), cosine, tol=0.0)


def test_cosine_value_at_top_of_potential(cosine, cosine_u):
    assert cosine_u.values[0] == pytest.approx(-2.0, abs=2e-2)
    x = cosine_u.grid.points()
    L0 = cosine.lagrangian()(x, np.zeros_like(x))
    assert np.max(cosine_u.values - L0 / cosine.lam) <= 1e-4
    # the constant curve at the bottom of the potential is far from optimal
    assert cosine_u.values[32] < 2.0 - 0.1


def test_u_minus_is_fixed_by_its_step(cosine, cosine_u, coarse_sg):
    stepped = backward_step(cosine_u, coarse_sg, cosine)
    assert sup_distance(stepped, cosine_u) <= 1e-5
    lifted = cosine_u + 1.0
    assert np.any(backward_step(lifted, coarse_sg, cosine).values < lifted.values - 5e-3)


def test_residual_field(free, cosine, cosine_u):
    zero = GridFunction.constant(PeriodicGrid(8), 0.0)
    assert residual_field(zero, free).sup_norm == 0.0
    residual = residual_field(cosine_u, cosine)
    assert residual.name == "residual"
    assert abs(residual.values[0]) <= 1e-2


def test_regularity_report_of_smooth_field():
    grid = PeriodicGrid(128)
    w = wave(grid, amplitude=0.01)
    report = regularity_report(w + (-0.1), w, aubry_mask=np.ones(grid.shape, dtype=bool))
    assert report["regular"]
    assert report["order_excess"] == pytest.approx(-0.1)
    assert report["aubry_mismatch"] == pytest.approx(0.1)


def test_regularize_free_is_identity(free):
    zero = GridFunction.constant(PeriodicGrid(16), 0.0)
    w = regularize(zero, 0.1, 0.05, EXACT, free)
    assert w.name == "u_reg"
    assert w.sup_norm == 0.0
    with pytest.raises(ValueError):
        regularize(zero, 0.05, 0.1, EXACT, free)
    # s = t gives u^- back, crease included
    with pytest.raises(ValueError):
        regularize(zero, 0.1, 0.1, EXACT, free)


@pytest.mark.parametrize("direction", ["backward", "forward"])
def test_lax_oleinik_matches_stepping(cosine, direction):
    psi = wave(PeriodicGrid(64))
    cfg = SemigroupConfig(dt=1e-2)
    stepped = evolve(psi, 0.1, cfg, cosine, direction)
    shot = lax_oleinik(psi, 0.1, cfg, cosine, direction)
    assert sup_distance(stepped, shot) <= 5e-3
    assert shot.name == psi.name
    with pytest.raises(ValueError):
        lax_oleinik(psi, 0.0, cfg, cosine)
    with pytest.raises(ValueError):
        lax_oleinik(psi, 0.1, cfg, cosine, "sideways")


def creased_subsolution(grid, height=0.5):
    """-2 + height (1 - |cos pi x|) for the cosine preset.

    Concave crease at 1/2; the residual vanishes only at x = 0.
    """
    return GridFunction.from_function(
        grid, lambda x: -2.0 + height * (1.0 - np.abs(np.cos(np.pi * x[:, 0])))
    )


def test_regularize_smooths_a_crease(cosine):
    grid = PeriodicGrid(256)
    psi = creased_subsolution(grid)
    assert np.max(residual_field(psi, cosine).values) <= 1e-3
    raw = second_difference_profile(psi, usable_scales(grid))["convex"]
    assert raw[0] / raw[-1] >= 4.0

    w = regularize(psi, 0.1, 0.05, SemigroupConfig(dt=1e-2), cosine)
    report = regularity_report(w, psi)
    assert report["regular"]
    assert max(report["c_concave"]) <= 60.0
    assert max(report["c_convex"]) <= 60.0
    assert report["variation_concave"] <= 0.25
    assert report["variation_convex"] <= 0.25
    assert report["order_excess"] <= 5e-3
    assert np.max(residual_field(w, cosine).values) <= 5e-3
    assert w.values[0] == pytest.approx(psi.values[0], abs=1e-3)
    # the crease itself is lowered
    assert w.values[128] < psi.values[128] - 1e-2


def test_regularize_rejects_rough_constants(free):
    grid = PeriodicGrid(64)
    rough = GridFunction.from_function(grid, lambda x: np.where(np.arange(64) % 2 == 0, 0.0, 1e-2))
    with pytest.raises(RegularityFailure) as err:
        regularize(rough, 0.02, 0.01, EXACT, free, c_max=1.0)
    assert not err.value.report["regular"]


def constant_curve(x0, velocity, T=1.0, dt=1e-3):
    times = np.linspace(-T, 0.0, int(round(T / dt)) + 1)
    x = x0 + velocity * (times - times[0])
    states = np.stack([x, np.full_like(x, velocity)], axis=1)
    return Trajectory(times, states, kind="xv")


def test_action_gap_and_domination(constant):
    c, lam = 1.0, constant.lam
    u = GridFunction.constant(PeriodicGrid(16), -c / lam)
    rest = constant_curve(0.3, 0.0)
    gap = action_gap(u, rest, constant)
    np.testing.assert_allclose(gap - gap[0], 0.0, atol=1e-6)
    moving = constant_curve(0.3, 1.0)
    gap = action_gap(u, moving, constant)
    assert gap[-1] - gap[0] == pytest.approx((1 - math.exp(-lam)) / (2 * lam), rel=1e-5)
    assert domination_check(u, [rest, moving], constant) == []

    too_high = u + 1.0
    violations = domination_check(too_high, [rest], constant)
    assert violations
    assert all(v["defect"] < -1e-3 for v in violations)
    assert violations[0]["curve"] == 0


def test_levels_and_refinement(free):
    cfg = SemigroupConfig(dt=1e-2)
    serial = solve_levels([(16, 1e-2), (8, 2e-2)], cfg, free)
    parallel = solve_levels([(16, 1e-2), (8, 2e-2)], cfg, free, workers=2)
    assert [u.grid.n for u in serial] == [16, 8]
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.values, b.values)
    study = refinement_study(16, cfg, free)
    assert study["distance"] == 0.0
    assert study["constant"] == 0.0
