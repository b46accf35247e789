import numpy as np
import pytest
import scipy.sparse as sp

from ballmpc.solver import GenericNLP, SolverConfig, solve, write_trace
from oracles import ball_qcqp_dual_optimum, grid_minimize
from problems import qcqp_feasible, qcqp_nlp, qcqp_objective, random_qcqp


def projection_problem(exact):
    c = np.array([0.5, -1.0])
    R = 1.2
    r = np.array([3.0, 1.0])
    P = 2 * np.eye(2)
    q = -2 * r
    return qcqp_nlp(P, q, c[None], np.array([R]), exact_rows=exact), c + R * (r - c) / np.linalg.norm(r - c)


@pytest.mark.parametrize("exact", [True, False], ids=["exact-rows", "linearized-rows"])
def test_projection_onto_ball(exact):
    prob, x_star = projection_problem(exact)
    res = solve(prob, np.zeros(2))
    assert res.status == "optimal"
    np.testing.assert_allclose(res.w, x_star, atol=1e-6)


def test_unconstrained_quadratic_one_iteration(rng):
    M = rng.normal(size=(5, 5))
    P = M @ M.T + np.eye(5)
    q = rng.normal(size=5)
    prob = GenericNLP(5, lambda x: 0.5 * x @ P @ x + q @ x, lambda x: P @ x + q,
                      lambda x: sp.csc_matrix(P))
    res = solve(prob, rng.normal(size=5))
    assert res.status == "optimal"
    assert res.iterations == 1
    np.testing.assert_allclose(res.w, np.linalg.solve(P, -q), atol=1e-8)


def test_nonlinear_equality_rosenbrock_on_circle():
    # min (1-x)² + 100(y-x²)²  s.t. x² + y² = 1.5
    f = lambda w: (1 - w[0]) ** 2 + 100 * (w[1] - w[0] ** 2) ** 2
    grad = lambda w: np.array([-2 * (1 - w[0]) - 400 * w[0] * (w[1] - w[0] ** 2),
                               200 * (w[1] - w[0] ** 2)])

    def hess(w):
        H = np.array([[2 - 400 * (w[1] - 3 * w[0] ** 2), -400 * w[0]], [-400 * w[0], 200.0]])
        ev, V = np.linalg.eigh(H)
        return sp.csc_matrix(V @ np.diag(np.maximum(ev, 1e-6)) @ V.T)

    prob = GenericNLP(2, f, grad, hess, eq=lambda w: np.array([w @ w - 1.5]),
                      eq_jac=lambda w: sp.csr_matrix(2 * w[None]))
    res = solve(prob, np.array([1.0, 0.5]), SolverConfig(max_iter=200))
    assert res.status == "optimal"
    # reference from a dense angle scan on the circle
    th = np.linspace(0, 2 * np.pi, 2_000_001)
    pts = np.sqrt(1.5) * np.stack([np.cos(th), np.sin(th)], axis=1)
    vals = (1 - pts[:, 0]) ** 2 + 100 * (pts[:, 1] - pts[:, 0] ** 2) ** 2
    assert res.objective == pytest.approx(vals.min(), abs=1e-6)


@pytest.mark.parametrize("seed", range(12))
def test_small_qcqp_never_worse_than_primal_grid(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(1, 4))
    P, q, C, R = random_qcqp(rng, n=n)
    ref = grid_minimize(qcqp_objective(P, q), qcqp_feasible(C, R), C.min(0) - R.max(),
                        C.max(0) + R.max(), levels=14, points=61 if n < 3 else 41)
    for exact in (True, False):
        res = solve(qcqp_nlp(P, q, C, R, exact), C[0].copy())
        assert res.status == "optimal"
        assert np.all(np.sum((res.w - C) ** 2, axis=1) <= R ** 2 + 1e-6)
        assert res.objective <= ref[1] + 1e-6


@pytest.mark.parametrize("seed", range(12))
def test_qcqp_matches_dual_grid(seed):
    """A feasible point whose objective meets a dual lower bound is optimal."""
    rng = np.random.default_rng(2000 + seed)
    P, q, C, R = random_qcqp(rng)
    lower = ball_qcqp_dual_optimum(P, q, C, R)
    for exact in (True, False):
        res = solve(qcqp_nlp(P, q, C, R, exact), C[0].copy())
        assert res.status == "optimal"
        assert np.all(np.sum((res.w - C) ** 2, axis=1) <= R ** 2 + 1e-6)
        assert res.objective >= lower - 1e-6
        assert res.objective - lower <= 1e-4


def test_infeasible_start_recovers_feasibility():
    prob, x_star = projection_problem(False)
    res = solve(prob, np.array([-10.0, 10.0]))
    assert res.status == "optimal"
    np.testing.assert_allclose(res.w, x_star, atol=1e-6)


def test_non_finite_start_reports_numeric_failure():
    prob, _ = projection_problem(True)
    res = solve(prob, np.array([np.nan, 0.0]))
    assert res.status == "numeric-failure"


def test_inconsistent_constraints_do_not_raise():
    prob = GenericNLP(1, lambda x: float(x @ x), lambda x: 2 * x, lambda x: sp.csc_matrix([[2.0]]),
                      eq=lambda x: np.array([x[0] - 1, x[0] + 1]),
                      eq_jac=lambda x: sp.csr_matrix([[1.0], [1.0]]))
    res = solve(prob, np.zeros(1), SolverConfig(max_iter=10))
    assert res.status in ("infeasible-qp", "max-iter", "numeric-failure")
    assert np.all(np.isfinite(res.w))


def test_trace_written(tmp_path):
    prob, _ = projection_problem(False)
    res = solve(prob, np.zeros(2))
    path = tmp_path / "trace.csv"
    write_trace(res, path)
    lines = path.read_text().splitlines()
    assert len(lines) == len(res.trace) + 1
    assert lines[0].startswith("iteration")


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(tol_feasibility=0.0)
