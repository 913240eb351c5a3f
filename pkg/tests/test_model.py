import numpy as np
import pytest

from weakkam.exceptions import ConvexityViolation, MaximizerOnBoundary
from weakkam.model import (
    DiscountedHamiltonian,
    FourierPotential,
    build_model,
    convexity_report,
    hamiltonian_vector_field,
    legendre_transform,
    make_preset,
    vector_field_jacobian,
)


def test_presets():
    cos = make_preset("cosine")
    assert cos.potential.dim == 1
    assert cos.default_bound() == pytest.approx(4 + 4 * np.pi)
    assert make_preset("cosine-2d").potential.dim == 2
    assert make_preset("two-well").potential.modes[0][1] == (2.0,)
    assert make_preset("shifted").shift == (0.3,)
    with pytest.raises(ValueError):
        make_preset("pendulum")


def test_custom_modes_override_preset():
    preset = make_preset("cosine", {"modes": [[0.5, 3, 0.0]], "constant": 0.25})
    V = preset.potential
    assert V(np.array([0.0])) == pytest.approx(0.75)
    assert V.max_value() == pytest.approx(0.75)


def test_build_model_from_config(make_config):
    model = build_model(make_config(**{"preset": {"name": "cosine"}, "lambda": 0.25}))
    assert model.lam == 0.25
    assert model.dim == 1
    assert model.name == "cosine"
    assert model.p_bound == pytest.approx(4 + 4 * np.pi)


def test_invalid_model_arguments():
    with pytest.raises(ValueError):
        make_preset("cosine").build(0.0)
    with pytest.raises(ValueError):
        DiscountedHamiltonian(dim=3, lam=1.0, h_eval=lambda x, p: 0.0)


def test_analytic_and_numeric_derivatives_agree(cosine, rng):
    x = rng.random((20, 1))
    p = rng.uniform(-3, 3, (20, 1))
    np.testing.assert_allclose(cosine.dh_dp(x, p), cosine.dh_dp(x, p, analytic=False), atol=1e-7)
    np.testing.assert_allclose(cosine.dh_dx(x, p), cosine.dh_dx(x, p, analytic=False), atol=1e-6)


def test_numeric_second_derivatives():
    V = FourierPotential(1, 0.0, ((1.0, (1.0,), 0.0),))

    def h(x, p):
        return 0.5 * np.sum(p ** 2, axis=-1) + V(x)

    model = DiscountedHamiltonian(dim=1, lam=0.5, h_eval=h)
    x = np.array([[0.1], [0.4]])
    p = np.array([[0.3], [-1.0]])
    hxx, hxp, hpp = model.second_derivatives(x, p)
    np.testing.assert_allclose(hpp[:, 0, 0], 1.0, atol=1e-4)
    np.testing.assert_allclose(hxp[:, 0, 0], 0.0, atol=1e-4)
    np.testing.assert_allclose(hxx[..., 0], V.hessian(x)[..., 0], rtol=1e-3)


def test_numeric_legendre_matches_closed_form(cosine, rng):
    x = rng.random((30, 1))
    v = rng.uniform(-3, 3, (30, 1))
    value, p_star = legendre_transform(cosine, x, v)
    np.testing.assert_allclose(value, 0.5 * v[:, 0] ** 2 - np.cos(2 * np.pi * x[:, 0]), atol=1e-10)
    np.testing.assert_allclose(p_star, v, atol=1e-6)
    numeric = cosine.lagrangian("numeric-legendre")
    np.testing.assert_allclose(numeric(x, v), cosine.lagrangian()(x, v), atol=1e-10)
    np.testing.assert_allclose(numeric.legendre_map(x, v), v, atol=1e-6)


def test_legendre_maximizer_on_boundary():
    model = make_preset("cosine").build(0.5, p_bound=1.0)
    with pytest.raises(MaximizerOnBoundary) as err:
        legendre_transform(model, np.array([[0.2]]), np.array([[2.0]]))
    assert err.value.p_star is not None


def test_legendre_rejects_fast_velocity():
    model = make_preset("cosine").build(0.5, v_bound=1.0)
    with pytest.raises(ValueError):
        legendre_transform(model, np.array([[0.2]]), np.array([[2.0]]))


def test_shifted_lagrangian():
    model = make_preset("shifted", {"shift": 0.3}).build(1.0)
    x = np.array([[0.4]])
    v = np.array([[0.7]])
    value, p_star = legendre_transform(model, x, v)
    assert value[0] == pytest.approx(0.5 * 0.49 + 0.3 * 0.7, abs=1e-10)
    assert model.lagrangian()(x, v)[0] == pytest.approx(value[0], abs=1e-10)
    assert p_star[0, 0] == pytest.approx(1.0, abs=1e-6)


def test_convexity_report(cosine):
    report = convexity_report(cosine, 200)
    assert report.ok
    assert report.min_second_difference == pytest.approx(1.0, rel=1e-6)


def test_convexity_violation():
    model = DiscountedHamiltonian(
        dim=1, lam=1.0, h_eval=lambda x, p: np.cos(p[..., 0]) + 0.0 * x[..., 0]
    )
    with pytest.raises(ConvexityViolation):
        convexity_report(model, 50)
    report = convexity_report(model, 50, raise_on_violation=False)
    assert not report.ok


def test_vector_field_and_jacobian(cosine):
    for x in (0.0, 0.5):
        assert np.allclose(hamiltonian_vector_field(cosine, [x, 0.0]), 0.0, atol=1e-12)
    state = np.array([0.3, 0.7])
    jac = vector_field_jacobian(cosine, state)
    h = 1e-6
    numeric = np.stack(
        [
            (hamiltonian_vector_field(cosine, state + h * e)
             - hamiltonian_vector_field(cosine, state - h * e)) / (2 * h)
            for e in np.eye(2)
        ],
        axis=1,
    )
    np.testing.assert_allclose(jac, numeric, atol=1e-5)
    assert np.trace(jac) == pytest.approx(-cosine.lam)


def test_perturbed_model(cosine):
    bumped = cosine.perturbed(lambda x: 0.1 * np.ones(x.shape[:-1]))
    x, p = np.array([[0.2]]), np.array([[0.4]])
    assert bumped(x, p)[0] == pytest.approx(cosine(x, p)[0] + 0.1)
    assert bumped.lagrangian()(x, p)[0] == pytest.approx(cosine.lagrangian()(x, p)[0] - 0.1)
    assert bumped.name == "cosine+perturbation"
    np.testing.assert_allclose(bumped.dh_dx(x, p), cosine.dh_dx(x, p), atol=1e-6)
