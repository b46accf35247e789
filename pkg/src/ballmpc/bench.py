"""Scenario generation, trajectory metrics and the two benchmark suites.

* Free-flyer suite: 10 m cube, 25 random obstacles with extents in [1, 2] m,
  start near one corner and goal near the opposite one, 250 steps of 0.4 s,
  solved offline.
* Formulation suite: 62 seeded 2-D unicycle worlds run in closed loop with a
  50-step horizon, once per collision formulation, with a per-step CPU budget.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BallMPCError, InitializationError
from .models import RobotModel, make_model, orientation_distance, simulate
from .nlp import Trajectory
from .planner import Planner, PlannerConfig, run_closed_loop
from .solver import SolverConfig
from .world import Obstacle, World

FREEFLYER_EXTENT = (1.0, 2.0)
N_OBSTACLES = 25
GOAL_THRESHOLD = 0.5
FORMULATION_SCENARIOS = 62


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    world: World
    model: str
    model_params: dict
    x_start: np.ndarray
    x_goal: np.ndarray
    N: int
    dt: float
    d_min: float
    margin_mode: str = "continuous"
    formulation: str = "ciao"
    seed: int = 0
    attempts: int = 1

    def make_model(self) -> RobotModel:
        return make_model(self.model, **self.model_params)

    def planner(self, **overrides) -> Planner:
        cfg = PlannerConfig(formulation=self.formulation, margin_mode=self.margin_mode,
                            d_min=self.d_min)
        for k, v in overrides.items():
            setattr(cfg, k, v)
        return Planner(self.make_model(), self.world, cfg)

    def to_dict(self) -> dict:
        return {
            "world": self.world.to_dict(),
            "model": {"name": self.model, **self.model_params},
            "start": self.x_start.tolist(),
            "goal": self.x_goal.tolist(),
            "horizon": self.N,
            "dt": self.dt,
            "d_min": self.d_min,
            "margin_mode": self.margin_mode,
            "formulation": self.formulation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        params = dict(d["model"])
        name = params.pop("name")
        return cls(World.from_dict(d["world"]), name, params, np.array(d["start"], dtype=float),
                   np.array(d["goal"], dtype=float), int(d["horizon"]), float(d["dt"]),
                   float(d.get("d_min", 0.3)), d.get("margin_mode", "continuous"),
                   d.get("formulation", "ciao"), int(d.get("seed", 0)))


def _random_obstacles(rng, lower, upper, count, extent):
    obs = []
    dim = len(lower)
    for _ in range(count):
        size = rng.uniform(extent[0], extent[1], size=dim)
        center = rng.uniform(lower, upper)
        if rng.random() < 0.5:
            obs.append(Obstacle.sphere(center, float(size[0]) / 2.0))
        else:
            obs.append(Obstacle.box(center - size / 2.0, center + size / 2.0))
    return obs


def obstacle_extent(obs: Obstacle) -> np.ndarray:
    """Side lengths of the obstacle's bounding box."""
    if obs.kind == "sphere":
        return np.full(len(obs.center), 2.0 * obs.radius)
    return obs.upper - obs.lower


def _clear_endpoints(world, planner, x_start, x_goal, N, dt):
    m = planner.model
    mg = planner.margins(dt, N)
    need = mg.stage + 0.05
    P = np.vstack([x_start[m.pos_idx], x_goal[m.pos_idx]])
    if np.any(world.distances(P) <= need):
        return False
    try:
        from .planner import grid_path
        grid_path(world, P[0], P[1], mg.stage, planner.config.grid_resolution)
    except BallMPCError:
        return False
    return True


def generate_benchmark(seed: int, d_min: float = 0.3, v_max: float = 0.5, a_max: float = 0.1,
                       max_attempts: int = 50) -> Scenario:
    """Free-flyer scenario in a 10 m cube; deterministic per seed.

    Obstacles whose placement blocks the start, the goal or every grid path
    are redrawn from the next sub-seed.
    """
    lower, upper = np.zeros(3), np.full(3, 10.0)
    params = {"v_max": v_max, "a_max": a_max}
    for attempt in range(max_attempts):
        rng = np.random.default_rng([int(seed), attempt])
        obs = _random_obstacles(rng, lower, upper, N_OBSTACLES, FREEFLYER_EXTENT)
        world = World(lower, upper, obs)
        p0 = np.array([1.0, 1.0, 1.0]) + rng.uniform(-0.3, 0.3, 3)
        pg = np.array([9.0, 9.0, 9.0]) + rng.uniform(-0.3, 0.3, 3)
        yaw = rng.uniform(-np.pi, np.pi)
        x0 = np.zeros(12)
        x0[:3] = p0
        xg = np.zeros(12)
        xg[:3] = pg
        xg[8] = yaw
        sc = Scenario(world, "free_flyer", params, x0, xg, 250, 0.4, d_min, seed=int(seed),
                      attempts=attempt + 1)
        if _clear_endpoints(world, sc.planner(), x0, xg, sc.N, sc.dt):
            return sc
    raise InitializationError(f"seed {seed}: no unblocked scenario in {max_attempts} attempts")


def generate_planar(seed: int, size: float = 6.0, n_obstacles: int = 7,
                    extent=(0.4, 1.0), d_min: float = 0.2, N: int = 50, dt: float = 0.1,
                    v_max: float = 1.0, a_max: float = 1.0, max_attempts: int = 50) -> Scenario:
    """2-D unicycle scenario for the formulation comparison."""
    lower, upper = np.zeros(2), np.full(2, size)
    params = {"v_max": v_max, "a_max": a_max}
    for attempt in range(max_attempts):
        rng = np.random.default_rng([int(seed), 7919, attempt])
        obs = _random_obstacles(rng, lower + 1.0, upper - 1.0, n_obstacles, extent)
        world = World(lower, upper, obs)
        x0 = np.array([0.7, 0.7, rng.uniform(-np.pi, np.pi), 0.0, 0.0])
        xg = np.array([size - 0.7, size - 0.7, rng.uniform(-np.pi, np.pi), 0.0, 0.0])
        sc = Scenario(world, "unicycle", params, x0, xg, N, dt, d_min, seed=int(seed),
                      attempts=attempt + 1)
        if _clear_endpoints(world, sc.planner(grid_resolution=0.05), x0, xg, N, dt):
            return sc
    raise InitializationError(f"seed {seed}: no unblocked scenario in {max_attempts} attempts")


def formulation_suite(count: int = FORMULATION_SCENARIOS, seed: int = 0, **kw) -> list:
    return [generate_planar(seed + i, **kw) for i in range(count)]


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def state_metric(model: RobotModel, x, x_goal) -> float:
    """Equal-weight sum of absolute differences; orientations use the unit-circle chord."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(x_goal, dtype=float)
    ang = set(int(a) for a in model.angle_idx)
    total = 0.0
    for i in range(len(x)):
        total += orientation_distance(x[i], g[i]) if i in ang else abs(x[i] - g[i])
    return total


def _metric_batch(model, X, g):
    X = np.atleast_2d(X)
    ang = np.asarray(model.angle_idx, dtype=int)
    other = np.setdiff1d(np.arange(X.shape[1]), ang)
    val = np.sum(np.abs(X[:, other] - g[other]), axis=1)
    if len(ang):
        dc = np.cos(X[:, ang]) - np.cos(g[ang])
        ds = np.sin(X[:, ang]) - np.sin(g[ang])
        val = val + np.sum(np.sqrt(dc ** 2 + ds ** 2), axis=1)
    return val


def cost_rho(model: RobotModel, states, x_goal) -> float:
    """``J_ρ``: the state metric summed over all stages ``0..N``."""
    return float(np.sum(_metric_batch(model, states, np.asarray(x_goal, dtype=float))))


def control_effort(controls, dt: float) -> float:
    """``J_u = Σ_k Δt ‖u_k‖₁``."""
    return float(dt * np.sum(np.abs(np.atleast_2d(controls))))


@dataclass
class PathMetrics:
    time_to_goal: float | None
    path_length: float | None
    clearance: float
    reached: bool
    total_length: float
    samples: int

    def to_dict(self):
        return asdict(self)


def oversample(model: RobotModel, states, controls, dt: float, sample_dt: float = 0.01):
    """Re-integrate every interval from its knot with the held control.

    Returns ``(times, states)`` on a grid of spacing ``dt / round(dt / sample_dt)``.
    """
    states = np.atleast_2d(states)
    controls = np.atleast_2d(controls)
    sub = max(1, int(round(dt / sample_dt)))
    out = [states[0][None]]
    for k in range(len(controls)):
        seg = simulate(model, states[k], controls[k][None], dt, sub)
        out.append(seg[1:])
    X = np.concatenate(out)
    return np.arange(len(X)) * (dt / sub), X


def path_metrics(model: RobotModel, world: World, states, controls, dt: float, x_goal,
                 threshold: float = GOAL_THRESHOLD, sample_dt: float = 0.01, t: float = 0.0) -> PathMetrics:
    """Time to goal, path length and clearance on the oversampled trajectory.

    Time and length stop at the first sample with ``ρ(x, x_G) < threshold``;
    clearance is the minimum over all samples. Samples outside the world
    bounds count as zero clearance.
    """
    times, X = oversample(model, states, controls, dt, sample_dt)
    P = X[:, model.pos_idx]
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    rho = _metric_batch(model, X, np.asarray(x_goal, dtype=float))
    hit = np.flatnonzero(rho < threshold)
    inside = world.contains(P)
    d = np.zeros(len(P))
    if inside.any():
        d[inside] = world.distances(P[inside], t)
    clearance = float(d.min())
    total = float(seg.sum())
    if len(hit):
        i = int(hit[0])
        return PathMetrics(float(times[i]), float(seg[:i].sum()), clearance, True, total, len(X))
    return PathMetrics(None, None, clearance, False, total, len(X))


def linearization_error(model: RobotModel, traj: Trajectory) -> float:
    """Largest dynamics defect under exact RK4 re-simulation."""
    from .models import rk4
    return float(np.max(np.abs(traj.states[1:] - rk4(model, traj.states[:-1], traj.controls, traj.dt))))


@dataclass
class ScenarioResult:
    seed: int
    J_rho: float
    J_u: float
    time_to_goal: float | None
    path_length: float | None
    clearance: float
    total_compute: float
    iterations: int
    per_iteration_compute: float
    timeout: bool
    feasible: bool
    linearization_error: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# free-flyer benchmark (offline)
# ---------------------------------------------------------------------------

def run_freeflyer(scenario: Scenario, planner_overrides: dict | None = None,
                  time_budget: float | None = None) -> tuple:
    planner = scenario.planner(**(planner_overrides or {}))
    m = planner.model
    t0 = time.process_time()
    res = planner.optimize_trajectory(scenario.x_start, scenario.x_goal, scenario.N, scenario.dt)
    total = time.process_time() - t0
    traj = res.trajectory
    pm = path_metrics(m, scenario.world, traj.states, traj.controls, traj.dt, scenario.x_goal)
    out = ScenarioResult(
        seed=scenario.seed,
        J_rho=cost_rho(m, traj.states, scenario.x_goal),
        J_u=control_effort(traj.controls, traj.dt),
        time_to_goal=pm.time_to_goal,
        path_length=pm.path_length,
        clearance=pm.clearance,
        total_compute=total,
        iterations=res.iterations,
        per_iteration_compute=total / max(res.iterations, 1),
        timeout=bool(time_budget is not None and total > time_budget),
        feasible=res.feasible,
        linearization_error=linearization_error(m, traj),
        extra={"cost_trace": res.cost_trace, "sqp_iterations": res.sqp_iterations,
               "stage_clearance": res.report.min_clearance if res.report else None},
    )
    return out, res


def summarize(values) -> dict:
    v = np.array([x for x in values if x is not None], dtype=float)
    if not len(v):
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(len(v))}


def freeflyer_report(results) -> dict:
    keys = ["J_rho", "J_u", "time_to_goal", "path_length", "clearance", "total_compute",
            "iterations", "per_iteration_compute", "linearization_error"]
    rep = {k: summarize([getattr(r, k) for r in results]) for k in keys}
    rep["feasible"] = int(sum(r.feasible for r in results))
    rep["scenarios"] = len(results)
    rep["results"] = [r.to_dict() for r in results]
    return rep


# ---------------------------------------------------------------------------
# formulation comparison (closed loop)
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    seed: int
    formulation: str
    steps: int
    reached: bool
    time_to_goal: float | None
    path_length: float | None
    clearance: float
    step_ms: list
    sqp_iterations: list
    timeout: bool
    failure: str | None = None

    def to_dict(self):
        return asdict(self)


def run_formulation(scenario: Scenario, formulation: str, cpu_budget: float = 1.0,
                    max_steps: int = 300, solver: SolverConfig | None = None,
                    barrier_weight: float | None = None) -> RunRecord:
    over = {"formulation": formulation}
    if barrier_weight is not None:
        over["barrier_weight"] = barrier_weight
    planner = scenario.planner(**over)
    m = planner.model
    failure = None
    try:
        tr = run_closed_loop(planner, scenario.x_start, scenario.x_goal, scenario.N, scenario.dt,
                             max_steps, solver=solver or SolverConfig(max_iter=30),
                             goal_test=lambda x: state_metric(m, x, scenario.x_goal) < GOAL_THRESHOLD)
    except BallMPCError as exc:
        return RunRecord(scenario.seed, formulation, 0, False, None, None, 0.0, [], [], False,
                         f"{type(exc).__name__}: {exc}")
    ms = (tr.cpu_seconds * 1e3).tolist()
    if any(s == "numeric-failure" for s in tr.statuses):
        failure = "numeric-failure"
    pm = path_metrics(m, scenario.world, tr.states, tr.controls, tr.dt, scenario.x_goal)
    return RunRecord(scenario.seed, formulation, len(tr.controls), pm.reached, pm.time_to_goal,
                     pm.path_length, pm.clearance, ms, tr.sqp_iterations.tolist(),
                     bool(len(ms) and max(ms) > cpu_budget * 1e3), failure)


def aggregate_runs(runs) -> dict:
    """Table-style row for one formulation; averages skip runs that timed out."""
    ok = [r for r in runs if not r.timeout and r.steps]
    steps_ms = [x for r in ok for x in r.step_ms]
    iters = [x for r in ok for x in r.sqp_iterations]
    total_ms = sum(steps_ms)
    total_it = sum(iters)
    all_ms = [x for r in runs for x in r.step_ms]
    return {
        "ms_per_step": float(np.mean(steps_ms)) if steps_ms else None,
        "ms_per_iteration": float(total_ms / total_it) if total_it else None,
        "iterations_per_step": float(np.mean(iters)) if iters else None,
        "time_to_goal": summarize([r.time_to_goal for r in ok])["mean"],
        "path_length": summarize([r.path_length for r in ok])["mean"],
        "max_ms_per_step": float(max(all_ms)) if all_ms else None,
        "pct_timeouts": 100.0 * sum(r.timeout for r in runs) / max(len(runs), 1),
        "reached": int(sum(r.reached for r in runs)),
        "min_clearance": float(min(r.clearance for r in runs)) if runs else None,
        "failures": int(sum(r.failure is not None for r in runs)),
        "runs": len(runs),
    }


def compare_formulations(scenarios, formulations=("ciao", "actual", "linearized", "log-barrier"),
                         cpu_budget: float = 1.0, max_steps: int = 300,
                         solver: SolverConfig | None = None, progress=None) -> dict:
    table, runs = {}, {}
    for f in formulations:
        rs = []
        for sc in scenarios:
            r = run_formulation(sc, f, cpu_budget, max_steps, solver)
            rs.append(r)
            if progress is not None:
                progress(f, sc.seed, r)
        table[f] = aggregate_runs(rs)
        runs[f] = [r.to_dict() for r in rs]
    return {"cpu_budget_s": cpu_budget, "scenarios": len(scenarios), "table": table, "runs": runs}


def save_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    raise TypeError(f"not serializable: {type(o)}")
