import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ballmpc.bench import oversample
from ballmpc.errors import InitializationError, UnreachableGoalError
from ballmpc.freeball import grow_centers
from ballmpc.models import DoubleIntegrator, Unicycle, rk4
from ballmpc.nlp import Reference
from ballmpc.planner import (Planner, PlannerConfig, continuous_margins, discrete_margins,
                             grid_path, initial_guess, reference_trajectory, run_closed_loop,
                             standstill)
from ballmpc.world import Obstacle, World, rasterize
from oracles import grid_shortest_length

DI = DoubleIntegrator(2, 1.0, 1.0)


def corridor():
    return World([0, 0], [10, 5], (Obstacle.box([0, 0], [10, 1.5]), Obstacle.box([0, 3.5], [10, 5])))


def sphere_between():
    return World([0, 0], [10, 6], (Obstacle.sphere([5, 3], 1.0),))


# -- margins ------------------------------------------------------------------

def test_continuous_margin_value():
    mg = continuous_margins(1.0, 2.0, 0.1, 0.3, N=4)
    np.testing.assert_allclose(mg.per_stage, 0.3525, atol=1e-15)
    assert mg.per_stage.shape == (5,)


def test_continuous_margin_tends_to_base():
    for dt in (1e-3, 1e-5, 1e-8):
        assert continuous_margins(1.0, 2.0, dt, 0.3).stage == pytest.approx(0.3, abs=dt)


@given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.01, 1), st.floats(0.01, 1))
def test_margin_linear_in_speed(v, a, dt, d):
    m1 = continuous_margins(v, a, dt, d).stage
    m2 = continuous_margins(2 * v, a, dt, d).stage
    assert m2 - m1 == pytest.approx(v * dt / 2, rel=1e-9, abs=1e-12)
    assert m1 >= v * dt / 2 + a * dt ** 2 / 8 + d - 1e-12


def test_margin_rejects_nonpositive():
    with pytest.raises(ValueError):
        continuous_margins(0.0, 1.0, 0.1, 0.3)


def test_discrete_margin_is_base():
    np.testing.assert_array_equal(discrete_margins(0.3, 3).per_stage, 0.3)


def test_obstacle_speed_inflates_margins():
    p0 = Planner(DI, corridor(), PlannerConfig(d_min=0.3))
    p1 = Planner(DI, corridor(), PlannerConfig(d_min=0.3, obstacle_speed=0.5))
    assert p1.margins(0.2, 3).stage - p0.margins(0.2, 3).stage == pytest.approx(0.1)


# -- seeds and references ---------------------------------------------------------

def test_standstill_is_an_equilibrium():
    u = Unicycle()
    x0 = np.array([1.0, 2.0, 0.4, 0.0, 0.0])
    tr = standstill(u, x0, 10, 0.1)
    assert np.all(tr.states == x0)
    assert np.max(np.abs(rk4(u, tr.states[:-1], tr.controls, 0.1) - tr.states[1:])) == 0.0
    for k in range(10):
        assert np.all(u.h(tr.states[k], tr.controls[k]) <= 0)


def test_grid_path_in_empty_world_is_straight():
    w = World([0, 0], [10, 10])
    pts = grid_path(w, [1, 1], [8, 5], 0.2, 0.1)
    assert len(pts) == 2
    np.testing.assert_allclose(pts, [[1, 1], [8, 5]])


def wall_with_gap():
    return World([0, 0], [10, 10], (Obstacle.box([4.5, 0], [5.5, 4]), Obstacle.box([4.5, 5.5], [5.5, 10])))


def test_grid_path_passes_through_gap_and_is_shortest():
    w = wall_with_gap()
    res, clear = 0.1, 0.2
    pts = grid_path(w, [1, 8], [9, 8], clear, res, prune=False)
    at_wall = pts[np.abs(pts[:, 0] - 5.0) < 0.5]
    assert len(at_wall) and np.all((at_wall[:, 1] > 4.0) & (at_wall[:, 1] < 5.5))

    grid = rasterize(w, res)
    free = grid.values >= clear + res * math.sqrt(2) / 2
    s = tuple(np.round((pts[1] - grid.origin) / res).astype(int))
    g = tuple(np.round((pts[-2] - grid.origin) / res).astype(int))
    exact = grid_shortest_length(free, s, g) * res
    got = float(np.sum(np.linalg.norm(np.diff(pts[1:-1], axis=0), axis=1)))
    assert got <= 1.1 * exact
    assert got >= exact - 1e-9

    pruned = grid_path(w, [1, 8], [9, 8], clear, res)
    assert np.sum(np.linalg.norm(np.diff(pruned, axis=0), axis=1)) <= \
        np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)) + 1e-9


def test_grid_path_unreachable():
    w = World([0, 0], [10, 10], (Obstacle.box([4.5, 0], [5.5, 10]),))
    with pytest.raises(UnreachableGoalError):
        grid_path(w, [1, 5], [9, 5], 0.2, 0.1)


def test_grid_path_seed_respects_speed_limit():
    tr = initial_guess(DI, wall_with_gap(), [1, 8, 0, 0], [9, 8, 0, 0], 0.2, 150, "grid-path", 0.4, 0.1)
    step = np.linalg.norm(np.diff(tr.states[:, :2], axis=0), axis=1)
    assert np.all(step <= DI.v_max / 2 * 0.2 + 1e-9)
    np.testing.assert_allclose(tr.states[0], [1, 8, 0, 0])
    np.testing.assert_allclose(tr.states[-1], [9, 8, 0, 0])


def test_initial_guess_rejects_unknown_mode():
    with pytest.raises(ValueError):
        initial_guess(DI, corridor(), [1, 2.5, 0, 0], [9, 2.5, 0, 0], 0.1, 5, "random")


def test_reference_default_is_goal_everywhere():
    xg = np.array([3.0, 4.0, 0.0, 0.0])
    ref = reference_trajectory(DI, np.zeros(4), xg, 0.1, 6)
    assert np.all(ref.states == xg)
    assert np.all(ref.controls == 0) and ref.controls.shape == (6, 2)


def test_reference_grid_mode_empty_world_is_linear():
    xg = np.array([4.0, 2.0, 0.0, 0.0])
    ref = reference_trajectory(DI, np.zeros(4), xg, 0.5, 8, mode="grid")
    P = ref.states[:, :2]
    d = np.diff(P, axis=0)
    # constant half-speed steps, then parked at the goal
    moving = np.linalg.norm(d, axis=1) > 1e-12
    np.testing.assert_allclose(np.linalg.norm(d[moving], axis=1)[:-1], 0.25, atol=1e-12)
    np.testing.assert_allclose(d[moving, 0] * xg[1] - d[moving, 1] * xg[0], 0.0, atol=1e-12)


def test_reference_grid_mode_stays_free():
    w = wall_with_gap()
    ref = reference_trajectory(DI, np.array([1, 8, 0, 0.]), np.array([9, 8, 0, 0.]), 0.2, 120,
                               mode="grid", world=w, clearance=0.3, resolution=0.1)
    assert np.all(w.distances(ref.states[:, :2]) >= 0.3)


# -- one CIAO iteration -------------------------------------------------------------

def test_iteration_improves_feasible_seed_in_corridor():
    p = Planner(DI, corridor(), PlannerConfig(d_min=0.3))
    x0 = np.array([1, 2.5, 0, 0.])
    ref = Reference.constant([9, 2.5, 0, 0], 2, 30)
    seed = standstill(DI, x0, 30, 0.3)
    assert p.check(seed, x0=x0).is_feasible
    r = p.ciao_iteration(seed, ref, x0, "full_stop")
    assert r.feasible and p.check(r.trajectory, x0=x0).is_feasible
    assert r.cost < p.cost(seed, ref, x0) - 1.0


def test_iteration_fixed_point_in_empty_world():
    p = Planner(DI, World([-10, -10], [10, 10]), PlannerConfig(d_min=0.3))
    x0 = np.array([1, 2.5, 0, 0.])
    ref = Reference.constant([3, -1, 0, 0], 2, 20)
    r1 = p.ciao_iteration(standstill(DI, x0, 20, 0.3), ref, x0, "full_stop")
    r2 = p.ciao_iteration(r1.trajectory, ref, x0, "full_stop")
    np.testing.assert_allclose(r2.trajectory.states, r1.trajectory.states, atol=1e-6)
    assert r2.cost <= r1.cost


def test_hugging_center_moves_away():
    w = sphere_between()
    p = Planner(DI, w, PlannerConfig(d_min=0.3))
    dk = p.margins(0.3, 10).stage
    c = np.array([[5.0, 3.0 - 1.0 - dk]])
    C, _, _ = grow_centers(w, c, 0.0, p.config.line_search)
    assert w.distances(C)[0] > w.distances(c)[0]
    assert C[0, 1] < c[0, 1]


def test_iteration_repairs_non_free_seed():
    w = sphere_between()
    p = Planner(DI, w, PlannerConfig(d_min=0.3))
    x0 = np.array([3.6, 3.0, 0, 0.])  # 0.4 from the sphere, inside the 0.4525 stage margin
    r = p.ciao_iteration(standstill(DI, x0, 10, 0.2), Reference.constant(x0, 2, 10), x0, "full_stop")
    assert r.centers is not None
    assert np.all(w.distances(r.centers) > p.margins(0.2, 10).stage)


# -- offline optimization -----------------------------------------------------------

def test_straight_corridor_is_collinear():
    p = Planner(DI, corridor(), PlannerConfig(d_min=0.3))
    r = p.optimize_trajectory([1, 2.5, 0, 0], [9, 2.5, 0, 0], 40, 0.25)
    assert r.feasible
    assert np.max(np.abs(r.trajectory.states[:, 1] - 2.5)) <= 1e-3
    np.testing.assert_allclose(r.trajectory.states[-1], [9, 2.5, 0, 0], atol=1e-6)


@pytest.fixture(scope="module")
def around_sphere():
    p = Planner(DI, sphere_between(), PlannerConfig(d_min=0.3))
    return p, p.optimize_trajectory([1, 3.0, 0, 0], [9, 3.0, 0, 0], 40, 0.25)


def test_sphere_clearance_oversampled(around_sphere):
    p, r = around_sphere
    tr = r.trajectory
    w = p.world
    dk = p.margins(tr.dt, tr.N).per_stage
    assert r.feasible
    assert np.all(w.distances(tr.positions(DI)) >= dk - 1e-6)
    _, X = oversample(DI, tr.states, tr.controls, tr.dt, tr.dt / 40)
    assert w.distances(X[:, :2]).min() >= p.config.d_min


def test_cost_trace_non_increasing(around_sphere):
    _, r = around_sphere
    c = np.array(r.cost_trace)
    assert np.all(np.diff(c) <= 1e-6)
    assert all(r.feasible_trace)


def test_optimize_unreachable_goal_raises():
    w = World([0, 0], [10, 10], (Obstacle.box([4.5, 0], [5.5, 10]),))
    with pytest.raises(InitializationError):
        Planner(DI, w).optimize_trajectory([1, 5, 0, 0], [9, 5, 0, 0], 20, 0.2)


def test_speed_raises_clearance():
    w = World([0, 0], [10, 6], (Obstacle.sphere([5, 3.2], 1.0),))
    clear = []
    for v in (0.5, 1.0, 2.0):
        m = DoubleIntegrator(2, v, 1.0)
        p = Planner(m, w, PlannerConfig(d_min=0.2))
        r = p.optimize_trajectory([1, 3.0, 0, 0], [9, 3.0, 0, 0], 60, 0.4)
        assert r.feasible
        _, X = oversample(m, r.trajectory.states, r.trajectory.controls, 0.4, 0.01)
        clear.append(w.distances(X[:, :2]).min())
    assert clear[0] <= clear[1] <= clear[2]


# -- NMPC ------------------------------------------------------------------------

@pytest.mark.parametrize("model, x", [(DI, [2.0, 2.0, 0.0, 0.0]),
                                      (Unicycle(), [2.0, 2.0, 0.3, 0.0, 0.0])])
def test_nmpc_at_goal_applies_steady_control(model, x):
    p = Planner(model, sphere_between(), PlannerConfig(d_min=0.2))
    x = np.array(x)
    st0 = p.init_state(x, x, 20, 0.1)
    u, st1, info = p.nmpc_step(st0, x)
    np.testing.assert_allclose(u, model.steady_control(x), atol=1e-8)
    assert info["feasible"]
    assert st1.iteration == 1 and st1.t == pytest.approx(0.1)


def test_nmpc_shift_duplicates_terminal_stage():
    p = Planner(DI, sphere_between(), PlannerConfig(d_min=0.3))
    x0 = np.array([1, 3.0, 0, 0.])
    st0 = p.init_state(x0, np.array([9, 3.0, 0, 0.]), 15, 0.2)
    _, st1, info = p.nmpc_step(st0, x0)
    plan = info["plan"]
    np.testing.assert_array_equal(st1.trajectory.states[:-1], plan.states[1:])
    np.testing.assert_array_equal(st1.trajectory.states[-1], plan.states[-1])
    np.testing.assert_array_equal(st1.trajectory.controls[-1], DI.steady_control(plan.states[-1]))
    assert np.max(np.abs(plan.states[-1][DI.vel_idx])) <= 1e-6


def test_nmpc_reinitializes_after_divergence():
    p = Planner(DI, sphere_between(), PlannerConfig(d_min=0.3, nmpc_reference="goal"))
    x0 = np.array([1, 3.0, 0, 0.])
    st0 = p.init_state(x0, np.array([9, 3.0, 0, 0.]), 15, 0.2)
    _, _, info = p.nmpc_step(st0, x0 + np.array([0, 1.0, 0, 0]))
    assert info["reinitialized"]


def test_nmpc_endpoint_matches_offline():
    p = Planner(DI, sphere_between(), PlannerConfig(d_min=0.3))
    x0, xg = np.array([1, 3.2, 0, 0.]), np.array([9, 3.0, 0, 0.])
    off = p.optimize_trajectory(x0, xg, 40, 0.25)
    cl = run_closed_loop(p, x0, xg, 20, 0.25, 150)
    assert cl.reached
    assert np.linalg.norm(cl.states[-1] - off.trajectory.states[-1]) <= 0.5
    assert cl.min_clearance.min() >= p.config.d_min


@pytest.mark.parametrize("schedule", [
    [(0.0, (5, -2)), (10.0, (5, 2))],
    [(0.0, (9, 0.2)), (20.0, (1, 0.2))],
    [(0.0, (5, 3)), (16.0, (5, -3))],
])
def test_scripted_obstacle_keeps_clearance(schedule):
    ob = Obstacle.sphere((0, 0), 0.6, schedule=schedule)
    w = World([0, -5], [10, 5], (ob,))
    p = Planner(DI, w, PlannerConfig(d_min=0.3, obstacle_speed=0.45))
    tr = run_closed_loop(p, [1, 0, 0, 0], [9, 0, 0, 0], 20, 0.2, 150, substeps=20)
    assert tr.reached
    d = [w.distances(x[None, :2], t)[0] for t, x in zip(tr.fine_times, tr.fine_states)]
    assert min(d) >= 0.3
