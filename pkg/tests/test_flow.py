import math

import numpy as np
import pytest

from weakkam.aubry import DiscreteMeasure, constrained_residual
from weakkam.exceptions import EmptyRegion, Escape
from weakkam.flow import (
    PhaseCloud,
    attractor_approximate,
    cloud_distance,
    conformal_volume_defect,
    equilibria_find,
    flow_states,
    integrate,
    linearize,
    lyapunov_decay_check,
    lyapunov_values,
    sublevel_region,
    transport_measure,
    unstable_manifold,
)
from weakkam.grid import GridFunction, PeriodicGrid
from weakkam.model import make_preset

SADDLE_MU = (-0.5 + math.sqrt(0.25 + 16 * math.pi ** 2)) / 2


def free_solution(lam, x0, p0, t):
    return x0 + p0 * (1 - math.exp(-lam * t)) / lam, p0 * math.exp(-lam * t)


def test_integrate_free_closed_form(free):
    traj = integrate(free, [0.2, 1.5], 2.0, 1e-2)
    x, p = free_solution(free.lam, 0.2, 1.5, traj.times[-1])
    assert traj.times[-1] == pytest.approx(2.0)
    assert traj.states[-1, 0] == pytest.approx(x, abs=1e-10)
    assert traj.states[-1, 1] == pytest.approx(p, abs=1e-10)
    assert traj.kind == "xp"


def test_rk4_is_fourth_order(cosine):
    start = np.array([[0.1, 0.8]])
    reference = flow_states(cosine, start, 1.0, 1e-3)
    errors = [np.max(np.abs(flow_states(cosine, start, 1.0, dt) - reference)) for dt in (1e-2, 5e-3)]
    assert math.log2(errors[0] / errors[1]) == pytest.approx(4.0, abs=0.3)


def test_schedule_limits(free):
    with pytest.raises(ValueError):
        flow_states(free, [[0.0, 0.0]], 1.0, 0.05)
    with pytest.raises(ValueError):
        flow_states(free, [[0.0, 0.0]], -1.0, 1e-2)
    assert flow_states(free, [[0.3, 0.0]], 0.0, 1e-2)[0, 0] == 0.3


def test_escape_guard(cosine):
    with pytest.raises(Escape):
        flow_states(cosine, [[0.0, 11 * cosine.p_bound]], 1.0, 1e-2)


@pytest.mark.parametrize("preset", ["free", "cosine", "cosine-2d"])
def test_conformal_volume(preset):
    model = make_preset(preset).build(0.5)
    state = np.concatenate([np.full(model.dim, 0.3), np.full(model.dim, 0.4)])
    out = conformal_volume_defect(model, state, T=1.0, dt=1e-3)
    assert out["expected"] == pytest.approx(math.exp(-model.dim * 0.5))
    assert out["defect"] <= 1e-6


def test_jacobian_along_trajectory(cosine):
    traj = integrate(cosine, [0.1, 0.2], 0.5, 1e-3, with_jacobian=True)
    assert traj.jacobians.shape == (len(traj.times), 2, 2)
    np.testing.assert_array_equal(traj.jacobians[0], np.eye(2))


def test_linearize_cosine(cosine):
    saddle = linearize(cosine, [0.0, 0.0])
    assert saddle.classification == "saddle"
    assert saddle.mu_min_positive == pytest.approx(SADDLE_MU, rel=1e-7)
    assert saddle.mu_min_positive == pytest.approx(6.0379, abs=1e-3)
    sink = linearize(cosine, [0.5, 0.0])
    assert sink.classification == "sink"
    assert sink.mu_min_positive is None
    np.testing.assert_allclose(sink.eigenvalues.real, -0.25, atol=1e-7)
    for info, vpp in ((saddle, -4 * math.pi ** 2), (sink, 4 * math.pi ** 2)):
        s = info.eigenvalues
        np.testing.assert_allclose(s ** 2 + 0.5 * s + vpp, 0.0, atol=1e-5)
    assert saddle.to_dict()["eigenvalues"][0][1] == 0.0


def test_equilibria_cosine(cosine):
    found = equilibria_find(cosine, 16)
    assert not found.continuum
    assert [e.classification for e in found] == ["saddle", "sink"]
    np.testing.assert_allclose(found[0].location, [0.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(found[1].location, [0.5, 0.0], atol=1e-10)
    assert found.to_dict()["continuum"] is False


def test_equilibria_two_well():
    model = make_preset("two-well").build(0.5)
    found = equilibria_find(model, 16)
    assert [e.classification for e in found] == ["saddle", "sink", "saddle", "sink"]


def test_equilibria_continuum_and_none(free):
    found = equilibria_find(free, 8)
    assert found.continuum
    assert len(found) == 0
    shifted = make_preset("shifted").build(0.5)
    assert len(equilibria_find(shifted, 8)) == 0
    with pytest.raises(ValueError):
        equilibria_find(free, 4)


def test_sublevel_region_free(free):
    grid = PeriodicGrid(16)
    cloud = sublevel_region(GridFunction.constant(grid, 0.0), free, 41)
    assert len(cloud) == 16
    np.testing.assert_allclose(cloud.momenta(), 0.0, atol=1e-12)
    with pytest.raises(EmptyRegion):
        sublevel_region(GridFunction.constant(grid, 10.0), free, 41)


def test_attractor_of_free_flow(free):
    grid = PeriodicGrid(16)
    sigma = sublevel_region(GridFunction.constant(grid, 0.0), free, 41, slack=0.5)
    image = attractor_approximate(sigma, free, 10.0, 1e-2)
    assert image.timestamp == 10.0
    assert np.all(image.positions() >= 0.0) and np.all(image.positions() < 1.0)
    assert np.max(np.abs(image.momenta())) <= np.max(np.abs(sigma.momenta())) * math.exp(-5) + 1e-9


def test_lyapunov_free(free):
    u = GridFunction.constant(PeriodicGrid(16), 0.0)
    states = np.array([[0.1, 1.0], [0.5, -2.0]])
    np.testing.assert_allclose(lyapunov_values(u, free, states), [0.5, 2.0])
    report = lyapunov_decay_check(u, free, 20, 5.0)
    assert report["passed"]
    assert report["violations"] == 0
    assert report["worst_margin"] <= 1e-12
    assert report["n_trajectories"] == 20


def test_lyapunov_flags_supersolution(free):
    u = GridFunction.constant(PeriodicGrid(16), 1.0)
    report = lyapunov_decay_check(u, free, 5, 2.0, starts=np.array([[0.2, 0.0]]))
    assert report["n_trajectories"] == 1
    assert report["violations"] == 1
    assert report["worst_margin"] == pytest.approx(0.5 * (1 - math.exp(-1.0)))
    assert not report["passed"]


def test_lyapunov_cosine_random_orbits(cosine, cosine_u):
    report = lyapunov_decay_check(cosine_u, cosine, 30, 2.0)
    assert report["n_trajectories"] == 30
    assert np.isfinite(report["worst_margin"])
    again = lyapunov_decay_check(cosine_u, cosine, 30, 2.0)
    assert again == report


def test_transport_keeps_equilibrium_measure(cosine):
    mu = DiscreteMeasure.dirac([0.5])
    moved = transport_measure(mu, cosine, 1.0)
    np.testing.assert_allclose(moved.atoms, mu.atoms, atol=1e-9)
    np.testing.assert_array_equal(moved.weights, mu.weights)


def test_transported_measures_keep_nonnegative_residual(cosine, cosine_u, rng):
    rest = DiscreteMeasure.uniform([[0.0, 0.0], [0.5, 0.0]])
    moved = transport_measure(rest, cosine, 1e-2)
    assert constrained_residual(cosine_u, moved, cosine) >= -1e-3

    starts = np.stack([rng.random(4), rng.uniform(-2.0, 2.0, 4)], axis=1)
    samples = flow_states(cosine, starts, 10.0, 1e-2, record=True)
    tail = samples[samples.shape[0] // 2:]
    for k in range(len(starts)):
        x, p = tail[:, k, :1] % 1.0, tail[:, k, 1:]
        orbit = DiscreteMeasure.uniform(np.concatenate([x, cosine.dh_dp(x, p)], axis=1))
        moved = transport_measure(orbit, cosine, 1e-2)
        assert constrained_residual(cosine_u, moved, cosine) >= -1e-3


def test_unstable_manifold_leaves_saddle(cosine):
    saddle = linearize(cosine, [0.0, 0.0])
    branch = unstable_manifold(cosine, saddle, 1.0, dt=1e-3)
    assert branch.points.shape == (2 * 1001, 2)
    # the unstable direction has slope mu: p = mu x near the saddle
    near = branch.points[:2]
    x = (near[:, 0] + 0.5) % 1.0 - 0.5
    np.testing.assert_allclose(near[:, 1], SADDLE_MU * x, atol=1e-10)
    sink = linearize(cosine, [0.5, 0.0])
    assert len(unstable_manifold(cosine, sink, 1.0)) == 1


def test_cloud_distance_is_periodic():
    a = PhaseCloud([[0.999, 0.0]])
    b = PhaseCloud([[0.0, 0.0], [0.5, 1.0]])
    assert cloud_distance(a, b) == pytest.approx(1e-3)
    assert cloud_distance(b, b) == 0.0
    assert cloud_distance(b, a) == pytest.approx(math.hypot(0.499, 1.0))
