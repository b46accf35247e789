import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ballmpc import bench
from ballmpc.bench import (Scenario, aggregate_runs, control_effort, cost_rho, generate_benchmark,
                           generate_planar, obstacle_extent, oversample, path_metrics,
                           run_formulation, save_report, state_metric)
from ballmpc.models import DoubleIntegrator, Unicycle
from ballmpc.world import Obstacle, World
from oracles import point_obstacle_distance


def same_scenario(a, b):
    return json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_benchmark_is_deterministic():
    assert same_scenario(generate_benchmark(3), generate_benchmark(3))
    assert not same_scenario(generate_benchmark(3), generate_benchmark(4))


def test_benchmark_layout():
    sc = generate_benchmark(0)
    assert sc.N == 250 and sc.dt == pytest.approx(0.4) and sc.N * sc.dt == pytest.approx(100.0)
    assert len(sc.world.obstacles) == 25
    np.testing.assert_array_equal(sc.world.lower, 0.0)
    np.testing.assert_array_equal(sc.world.upper, 10.0)
    assert np.all(sc.x_start[:3] < 2) and np.all(sc.x_goal[:3] > 8)
    assert sc.x_start.shape == (12,)


@pytest.mark.parametrize("block", range(4))
def test_benchmark_endpoints_free_and_extents(block):
    for seed in range(25 * block, 25 * (block + 1)):
        sc = generate_benchmark(seed)
        margin = sc.planner().margins(sc.dt, 1).stage
        d = sc.world.distances(np.array([sc.x_start[:3], sc.x_goal[:3]]))
        assert np.all(d > margin)
        for ob in sc.world.obstacles:
            ext = obstacle_extent(ob)
            assert np.all(ext >= 1.0 - 1e-12) and np.all(ext <= 2.0 + 1e-12)


def test_planar_scenario_shape():
    sc = generate_planar(0)
    assert sc.model == "unicycle" and sc.N == 50
    p = sc.planner()
    assert np.all(sc.world.distances(np.array([sc.x_start[:2], sc.x_goal[:2]])) > p.margins(sc.dt, 1).stage)


def test_scenario_json_roundtrip():
    sc = generate_planar(5)
    back = Scenario.from_dict(json.loads(json.dumps(sc.to_dict())))
    assert same_scenario(sc, back)


# -- metrics -----------------------------------------------------------------------

def test_state_metric_zero_at_goal():
    u = Unicycle()
    g = np.array([1.0, 2.0, 0.5, 0.0, 0.0])
    assert state_metric(u, g, g) == 0.0
    assert cost_rho(u, np.tile(g, (7, 1)), g) == 0.0


def test_state_metric_hand_sum():
    u = Unicycle()
    g = np.zeros(5)
    X = np.array([[1.0, -1.0, math.pi, 0.5, 0.0],
                  [0.0, 0.0, math.pi / 2, 0.0, 0.2],
                  [0.0, 0.0, 2 * math.pi, 0.0, 0.0]])
    # |1| + |-1| + chord(π) = 2 + 0.5 ; chord(π/2) = √2 + 0.2 ; a full turn costs nothing
    assert cost_rho(u, X, g) == pytest.approx(4.5 + math.sqrt(2) + 0.2, abs=1e-12)
    assert state_metric(u, X[2], g) == pytest.approx(0.0, abs=1e-12)


def test_control_effort_examples():
    assert control_effort(np.zeros((4, 2)), 0.1) == 0.0
    U = np.array([[1.0, -2.0], [1.0, -2.0]])
    assert control_effort(U, 0.5) == pytest.approx(3.0)
    assert control_effort(2 * U, 0.5) == pytest.approx(6.0)


def straight_line(v=1.0, dt=0.5, N=10):
    m = DoubleIntegrator(2, 2.0, 1.0)
    X = np.array([[v * dt * k, 0.0, v, 0.0] for k in range(N + 1)])
    return m, X, np.zeros((N, 2))


def test_path_metrics_start_in_goal():
    m, X, U = straight_line()
    w = World([-1, -1], [10, 1])
    pm = path_metrics(m, w, X, U, 0.5, X[0])
    assert pm.reached and pm.time_to_goal == 0.0 and pm.path_length == 0.0


def test_path_metrics_straight_segment():
    m, X, U = straight_line()
    w = World([-1, -1], [10, 1])
    pm = path_metrics(m, w, X, U, 0.5, [5.0, 0.0, 1.0, 0.0], threshold=1e-6)
    assert pm.time_to_goal == pytest.approx(5.0, rel=0.01)
    assert pm.path_length == pytest.approx(5.0, rel=0.01)


def test_path_metrics_unreached():
    m, X, U = straight_line()
    pm = path_metrics(m, World([-1, -1], [10, 1]), X, U, 0.5, [9.0, 0.0, 0.0, 0.0])
    assert not pm.reached and pm.time_to_goal is None and pm.path_length is None


def test_clearance_matches_bruteforce():
    rng = np.random.default_rng(4)
    m = DoubleIntegrator(2, 2.0, 2.0)
    obs = (Obstacle.sphere([3, 1.2], 0.5), Obstacle.box([5, -2], [6, -0.8]))
    w = World([-2, -3], [10, 3], obs)
    N, dt = 12, 0.5
    U = rng.uniform(-0.3, 0.3, (N, 2))
    X = [np.array([0.0, 0.0, 0.8, 0.0])]
    for u in U:
        p, v = X[-1][:2], X[-1][2:]
        X.append(np.r_[p + v * dt + 0.5 * u * dt ** 2, v + u * dt])
    X = np.array(X)
    pm = path_metrics(m, w, X, U, dt, X[-1])
    # closed form of the held-acceleration motion at 0.01 s
    pts = []
    for k in range(N):
        for tau in np.arange(50) * 0.01:
            pts.append(X[k, :2] + X[k, 2:] * tau + 0.5 * U[k] * tau ** 2)
    pts.append(X[-1, :2])
    exact = min(point_obstacle_distance(p, obs) for p in pts)
    assert pm.clearance == pytest.approx(exact, abs=1e-9)
    assert pm.samples == len(pts)


def test_metrics_are_bitwise_deterministic():
    m, X, U = straight_line()
    w = World([-1, -1], [10, 1], (Obstacle.sphere([2, 0.8], 0.1),))
    a = path_metrics(m, w, X, U, 0.5, X[-1]).to_dict()
    b = path_metrics(m, w, X.copy(), U.copy(), 0.5, X[-1]).to_dict()
    assert a == b


@given(st.integers(0, 1000))
def test_oversampling_refinement(seed):
    rng = np.random.default_rng(seed)
    m = DoubleIntegrator(2, 2.0, 2.0)
    w = World([-5, -5], [15, 5], (Obstacle.sphere(rng.uniform([1, -1], [4, 1]), 0.4),))
    N, dt = 8, 0.4
    U = rng.uniform(-1, 1, (N, 2))
    X = [np.array([0.0, 0.0, 1.0, 0.0])]
    for u in U:
        X.append(np.r_[X[-1][:2] + X[-1][2:] * dt + 0.5 * u * dt ** 2, X[-1][2:] + u * dt])
    X = np.array(X)
    speed = np.max(np.linalg.norm(X[:, 2:], axis=1)) + np.max(np.abs(U)) * dt * 2
    coarse = path_metrics(m, w, X, U, dt, X[-1], sample_dt=0.02).clearance
    fine = path_metrics(m, w, X, U, dt, X[-1], sample_dt=0.01).clearance
    assert fine <= coarse + 1e-12
    assert coarse - fine <= speed * 0.02


def test_oversample_grid():
    m, X, U = straight_line(dt=0.4, N=3)
    t, Y = oversample(m, X, U, 0.4, 0.01)
    assert len(t) == 3 * 40 + 1
    np.testing.assert_allclose(np.diff(t), 0.01)
    np.testing.assert_allclose(Y[-1], X[-1], atol=1e-12)


# -- formulation comparison -----------------------------------------------------------

def test_run_record_and_report_roundtrip(tmp_path):
    sc = generate_planar(1)
    r = run_formulation(sc, "ciao", max_steps=4)
    assert r.steps == 4 and len(r.step_ms) == 4 and r.failure is None
    assert all(x >= 0 for x in r.step_ms) and r.clearance >= 0
    rep = {"cpu_budget_s": 1.0, "scenarios": 1, "table": {"ciao": aggregate_runs([r])},
           "runs": {"ciao": [r.to_dict()]}}
    path = tmp_path / "rep.json"
    save_report(rep, path)
    assert json.loads(path.read_text()) == json.loads(json.dumps(rep))


def test_aggregate_skips_timeouts():
    mk = lambda ms, to: bench.RunRecord(0, "ciao", len(ms), True, 1.0, 2.0, 0.5, ms, [1] * len(ms), to)
    row = aggregate_runs([mk([10.0, 20.0], False), mk([2000.0], True)])
    assert row["ms_per_step"] == pytest.approx(15.0)
    assert row["max_ms_per_step"] == pytest.approx(2000.0)
    assert row["pct_timeouts"] == pytest.approx(50.0)


def test_barrier_outside_domain_is_recorded():
    sc = generate_planar(2)
    ob = sc.world.obstacles[0]
    # start right next to an obstacle, inside the stage margin
    p = ob.center + np.r_[ob.radius + 0.05, 0.0] if ob.kind == "sphere" else \
        np.r_[ob.upper[0] + 0.05, 0.5 * (ob.lower[1] + ob.upper[1])]
    sc.x_start = np.r_[p, 0.0, 0.0, 0.0]
    r = run_formulation(sc, "log-barrier", max_steps=3)
    # the barrier is undefined at the start, so every solve reports a numeric failure
    assert r.failure == "numeric-failure"
    assert r.steps == 3
