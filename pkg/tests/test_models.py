import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ballmpc.errors import NumericError
from ballmpc.models import (DoubleIntegrator, FreeFlyer, Unicycle, augment, integrate, make_model,
                            orientation_distance, rk4, simulate)
from oracles import central_jacobian, fine_integration

MODELS = [DoubleIntegrator(2), DoubleIntegrator(3), Unicycle(), FreeFlyer()]


def random_state(model, rng):
    x = rng.uniform(-0.5, 0.5, model.nx)
    if isinstance(model, FreeFlyer):
        x[7] = rng.uniform(-0.8, 0.8)
    return x


def test_double_integrator_step_is_exact():
    np.testing.assert_allclose(integrate(DoubleIntegrator(1), [0.0, 0.0], [1.0], 1.0), [0.5, 1.0],
                               atol=1e-15)


def test_unicycle_at_rest_stays():
    x = np.array([1.0, -2.0, 0.7, 0.0, 0.0])
    np.testing.assert_array_equal(integrate(Unicycle(), x, [0.0, 0.0], 0.1), x)


def test_unicycle_straight_line_matches_fine_integration():
    m = Unicycle()
    x = np.array([0.0, 0.0, 0.0, 1.0, 0.0])
    out = integrate(m, x, [0.0, 0.0], 0.1)
    assert out[0] == pytest.approx(0.1, abs=1e-12)
    np.testing.assert_allclose(out, fine_integration(m, x, [0.0, 0.0], 0.1), atol=1e-6)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.name}{m.nx}")
def test_rk4_matches_fine_integration(model, rng):
    for _ in range(5):
        x = random_state(model, rng)
        u = rng.uniform(-0.3, 0.3, model.nu)
        np.testing.assert_allclose(integrate(model, x, u, 0.1),
                                   fine_integration(model, x, u, 0.1), atol=1e-6)


@pytest.mark.parametrize("model", [Unicycle(), FreeFlyer()], ids=lambda m: m.name)
def test_rk4_order(model, rng):
    x = random_state(model, rng)
    x[model.vel_idx] += 0.5
    u = rng.uniform(-0.5, 0.5, model.nu)
    errs = []
    for dt in (0.4, 0.2):
        errs.append(np.linalg.norm(integrate(model, x, u, dt) - fine_integration(model, x, u, dt)))
    assert errs[0] / errs[1] >= 8.0


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.name}{m.nx}")
def test_rk4_jacobians_match_finite_differences(model, rng):
    x = random_state(model, rng)
    u = rng.uniform(-0.3, 0.3, model.nu)
    _, Fx, Fu = rk4(model, x[None], u[None], 0.2, jac=True)
    Jx = central_jacobian(lambda z: integrate(model, z, u, 0.2), x)
    Ju = central_jacobian(lambda z: integrate(model, x, z, 0.2), u)
    np.testing.assert_allclose(Fx[0], Jx, atol=1e-7, rtol=1e-5)
    np.testing.assert_allclose(Fu[0], Ju, atol=1e-7, rtol=1e-5)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: f"{m.name}{m.nx}")
def test_continuous_jacobians_match_finite_differences(model, rng):
    x = random_state(model, rng)
    u = rng.uniform(-0.3, 0.3, model.nu)
    A, B = model.jac(x[None], u[None])
    np.testing.assert_allclose(A[0], central_jacobian(lambda z: model.f(z[None], u[None])[0], x),
                               atol=1e-7)
    np.testing.assert_allclose(B[0], central_jacobian(lambda z: model.f(x[None], z[None])[0], u),
                               atol=1e-7)


def test_unicycle_acceleration_row_jacobian(rng):
    m = Unicycle()
    x = random_state(m, rng)
    u = rng.uniform(-0.5, 0.5, 2)
    _, Jx, Ju = m.h_extra(x[None], u[None])
    np.testing.assert_allclose(Jx[0], central_jacobian(lambda z: m.h_extra(z[None], u[None])[0][0], x),
                               atol=1e-8)
    np.testing.assert_allclose(Ju[0], central_jacobian(lambda z: m.h_extra(x[None], z[None])[0][0], u),
                               atol=1e-8)


def test_non_finite_input_raises():
    with pytest.raises(NumericError):
        integrate(Unicycle(), [0, 0, np.nan, 0, 0], [0, 0], 0.1)


def test_orientation_distance_values():
    assert orientation_distance(0.0, math.pi) == pytest.approx(2.0)
    assert orientation_distance(0.0, math.pi / 2) == pytest.approx(math.sqrt(2))


@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(-5, 5), st.integers(-5, 5))
def test_orientation_distance_periodic(a, b, k, l):
    d = orientation_distance(a, b)
    assert orientation_distance(a + 2 * math.pi * k, b + 2 * math.pi * l) == pytest.approx(d, abs=1e-12)
    assert orientation_distance(a, a + 2 * math.pi * k) == pytest.approx(0.0, abs=1e-12)


def test_augment_unicycle():
    np.testing.assert_allclose(augment(Unicycle(), [1, 2, 0, 0.5, 0.1]), [1, 2, 1, 0, 0.5, 0.1])


def test_augment_double_integrator_is_identity():
    x = np.array([0.3, -1.0, 2.0, 0.1])
    np.testing.assert_array_equal(augment(DoubleIntegrator(2), x), x)


@given(st.floats(-6, 6), st.floats(-6, 6))
def test_augment_pair_distance_matches_orientation_distance(a, b):
    m = Unicycle()
    qa = augment(m, [0, 0, a, 0, 0])
    qb = augment(m, [0, 0, b, 0, 0])
    assert np.linalg.norm(qa - qb) == pytest.approx(orientation_distance(a, b), abs=1e-12)


def test_augment_jacobian(rng):
    m = FreeFlyer()
    x = random_state(m, rng)
    np.testing.assert_allclose(m.augment_jac(x[None])[0],
                               central_jacobian(lambda z: m.augment(z[None])[0], x), atol=1e-8)


def test_path_constraints_include_speed_and_acceleration():
    m = DoubleIntegrator(2, v_max=1.0, a_max=2.0)
    assert np.all(m.h([0, 0, 0.5, 0.5], [1.0, 1.0]) <= 0)
    assert np.max(m.h([0, 0, 1.0, 0.5])) > 0
    assert np.max(m.h([0, 0, 0, 0], [2.0, 0.5])) > 0
    uni = Unicycle(a_max=1.0)
    assert np.max(uni.h([0, 0, 0, 0.9, 1.4], [0.1, 0.0])) > 0  # centripetal part


def test_simulate_shape_and_consistency():
    m = Unicycle()
    U = np.array([[0.2, 0.1], [0.0, -0.1]])
    X = simulate(m, np.zeros(5), U, 0.2, substeps=4)
    assert X.shape == (9, 5)
    coarse = simulate(m, np.zeros(5), U, 0.2, substeps=1)
    np.testing.assert_allclose(X[::4], coarse, atol=1e-4)


def test_make_model():
    assert isinstance(make_model("unicycle", v_max=2.0), Unicycle)
    with pytest.raises(ValueError):
        make_model("boat")
    with pytest.raises(ValueError):
        DoubleIntegrator(2, v_max=0.0)
