import numpy as np
import pytest
import scipy.sparse as sp

from ballmpc.qp import HAVE_CLARABEL, INFEASIBLE, OPTIMAL, QPSettings, QuadRows, solve_qp
from oracles import qp_by_enumeration
from problems import qcqp_rows

BACKENDS = ["ipm"] + (["clarabel"] if HAVE_CLARABEL else [])


@pytest.fixture(params=BACKENDS)
def settings(request):
    return QPSettings(backend=request.param)


def test_textbook_kkt(settings):
    res = solve_qp([[2.0]], [0.0], G=[[-1.0]], h=[-1.0], settings=settings)
    assert res.status == OPTIMAL
    assert res.x[0] == pytest.approx(1.0, abs=1e-7)
    assert res.z[0] == pytest.approx(2.0, abs=1e-6)


def test_textbook_kkt_as_bound(settings):
    res = solve_qp([[2.0]], [0.0], lb=[1.0], settings=settings)
    assert res.x[0] == pytest.approx(1.0, abs=1e-7)
    assert res.z_lower[0] == pytest.approx(2.0, abs=1e-6)


def test_equality_only_matches_kkt_solve(settings, rng):
    n, m = 6, 3
    M = rng.normal(size=(n, n))
    P = M @ M.T + np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    K = np.block([[P, A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([-q, b]))
    res = solve_qp(sp.csc_matrix(P), q, A=A, b=b, settings=settings)
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, sol[:n], atol=1e-7)
    np.testing.assert_allclose(res.y, sol[n:], atol=1e-6)


@pytest.mark.parametrize("seed", range(40))
def test_random_qp_matches_active_set_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    m = int(rng.integers(1, 6))
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.1 * np.eye(n)
    q = rng.normal(size=n)
    G = rng.normal(size=(m, n))
    h = G @ rng.normal(size=n) + rng.uniform(0.0, 1.0, m)  # feasible by construction
    ref = qp_by_enumeration(P, q, G, h)
    for backend in BACKENDS:
        res = solve_qp(P, q, G=G, h=h, settings=QPSettings(backend=backend))
        assert res.status == OPTIMAL
        f = 0.5 * res.x @ P @ res.x + q @ res.x
        assert f == pytest.approx(ref[1], abs=1e-6)
        np.testing.assert_allclose(res.x, ref[0], atol=1e-5)


def test_projection_onto_ball(settings):
    c = np.array([1.0, -1.0, 0.5])
    R = 0.7
    r = np.array([3.0, 2.0, -1.0])
    quad = qcqp_rows(c[None], np.array([R]))
    res = solve_qp(2 * np.eye(3), -2 * r, quad=quad, settings=settings)
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, c + R * (r - c) / np.linalg.norm(r - c), atol=1e-6)
    assert res.zq[0] > 0


def test_ball_row_with_slack(settings):
    # min (x-3)² + μ s  s.t. x² ≤ 1 + s, s ≥ 0
    quad = QuadRows([0], [0], [0.0], [1.0], [1])
    # μ = 10 exceeds the marginal gain 2 of relaxing the ball at x = 1: slack stays 0
    res = solve_qp(np.diag([2.0, 0.0]), [-6.0, 10.0], quad=quad, lb=[-np.inf, 0.0],
                   settings=settings)
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-6)
    # μ = 1: multiplier 1, 2(x-3) + 2x = 0 → x = 1.5, s = x² - 1
    res = solve_qp(np.diag([2.0, 0.0]), [-6.0, 1.0], quad=quad, lb=[-np.inf, 0.0],
                   settings=settings)
    # interior-point termination is on the duality gap, so the point is only
    # accurate to about the square root of the tolerance; the objective is tight
    x, s = res.x
    assert (x - 3) ** 2 + s == pytest.approx(1.5 ** 2 + 1.25, abs=1e-8)
    np.testing.assert_allclose(res.x, [1.5, 1.25], atol=1e-4)
    assert res.zq[0] == pytest.approx(1.0, abs=1e-4)


def test_inconsistent_equalities_report_infeasible(settings):
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    res = solve_qp(np.eye(2), np.zeros(2), A=A, b=[0.0, 1.0], settings=settings)
    assert res.status == INFEASIBLE


def test_deterministic(settings, rng):
    P = np.diag([1.0, 2.0, 3.0])
    q = rng.normal(size=3)
    G = rng.normal(size=(4, 3))
    h = np.abs(rng.normal(size=4))
    a = solve_qp(P, q, G=G, h=h, settings=settings)
    b = solve_qp(P, q, G=G, h=h, settings=settings)
    np.testing.assert_array_equal(a.x, b.x)


def test_quad_rows_value_and_jacobian(rng):
    from oracles import central_jacobian
    quad = QuadRows([0, 0, 1], [0, 2, 1], [0.5, -0.2, 1.0], [1.0, 0.3], [3, -1])
    x = rng.normal(size=4)
    np.testing.assert_allclose(quad.jac(x, 4).toarray(), central_jacobian(quad.value, x), atol=1e-8)
    assert quad.value(x)[1] == pytest.approx((x[1] - 1.0) ** 2 - 0.3)
