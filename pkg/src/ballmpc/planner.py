"""Ball-constrained trajectory optimization and receding-horizon control.

``ciao_iteration`` is the basic step: take the incumbent trajectory's knot
positions as ball centers, push each center along the distance gradient to
enlarge its ball, then solve the ball-constrained NLP warm-started at the
incumbent. ``optimize_trajectory`` repeats it until the cost stalls and
``nmpc_step`` runs one step per control period with a full-stop terminal set.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (InfeasibleSeedError, InitializationError, OutOfDomainError,
                     UnreachableGoalError)
from .freeball import LineSearchParams, grow_centers
from .kernels import astar
from .models import DoubleIntegrator, FreeFlyer, RobotModel, Unicycle, simulate
from .nlp import (CiaoNlp, FeasibilityReport, Formulation, Objective, Reference, Trajectory,
                  assemble, feasibility_check)
from .solver import SolverConfig, solve
from .world import World, rasterize

log = logging.getLogger(__name__)

GOAL_RADIUS = 0.5


# ---------------------------------------------------------------------------
# margins
# ---------------------------------------------------------------------------

@dataclass
class Margins:
    base: float
    per_stage: np.ndarray
    v_max: float
    a_max: float
    dt: float
    mode: str

    @property
    def stage(self) -> float:
        return float(self.per_stage.max())


def continuous_margins(v_max: float, a_max: float, dt: float, d_min: float, N: int = 1) -> Margins:
    """Stage margin that keeps the inter-sample path at least ``d_min`` away.

    Between two knots the position deviates from either knot by at most
    ``v̄Δt/2 + āΔt²/8``.
    """
    if min(v_max, a_max, dt, d_min) <= 0:
        raise ValueError("v_max, a_max, dt and d_min must be positive")
    dk = v_max * dt / 2.0 + a_max * dt ** 2 / 8.0 + d_min
    return Margins(d_min, np.full(N + 1, dk), v_max, a_max, dt, "continuous")


def discrete_margins(d_min: float, N: int = 1, v_max: float = 0.0, a_max: float = 0.0,
                     dt: float = 0.0) -> Margins:
    return Margins(d_min, np.full(N + 1, float(d_min)), v_max, a_max, dt, "discrete")


# ---------------------------------------------------------------------------
# seeds and references
# ---------------------------------------------------------------------------

def standstill(model: RobotModel, x0, N: int, dt: float) -> Trajectory:
    """Stay at ``x0`` with the steady control: ``[x0, u_s, ..., u_s, x0]``."""
    x0 = np.asarray(x0, dtype=float)
    us = model.steady_control(x0)
    return Trajectory(dt, np.tile(x0, (N + 1, 1)), np.tile(us, (N, 1)))


def _wrap_to(angle, ref):
    return ref + (angle - ref + np.pi) % (2 * np.pi) - np.pi


def lift_positions(model: RobotModel, P: np.ndarray, dt: float, x_start, x_goal) -> Trajectory:
    """States and controls along a position sequence via finite differences.

    The first and last states are replaced by ``x_start`` and ``x_goal``; the
    result is generally not dynamically consistent.
    """
    P = np.asarray(P, dtype=float)
    N = len(P) - 1
    x_start = np.asarray(x_start, dtype=float)
    x_goal = np.asarray(x_goal, dtype=float)
    V = np.gradient(P, dt, axis=0) if N >= 2 else np.zeros_like(P)
    V[0] = 0.0
    V[-1] = 0.0
    if isinstance(model, DoubleIntegrator):
        X = np.concatenate([P, V], axis=1)
        U = np.diff(V, axis=0) / dt
    elif isinstance(model, Unicycle):
        speed = np.linalg.norm(V, axis=1)
        th = np.empty(N + 1)
        prev = x_start[2]
        for k in range(N + 1):
            if speed[k] > 1e-9:
                prev = _wrap_to(math.atan2(V[k, 1], V[k, 0]), prev)
            th[k] = prev
        w = np.gradient(th, dt) if N >= 2 else np.zeros(N + 1)
        w[0] = w[-1] = 0.0
        X = np.stack([P[:, 0], P[:, 1], th, speed, w], axis=1)
        U = np.stack([np.diff(speed) / dt, np.diff(w) / dt], axis=1)
    elif isinstance(model, FreeFlyer):
        e0 = x_start[6:9]
        e1 = _wrap_to(x_goal[6:9], e0)
        s = np.linspace(0.0, 1.0, N + 1)[:, None]
        E = e0 + s * (e1 - e0)
        Edot = np.gradient(E, dt, axis=0) if N >= 2 else np.zeros_like(E)
        Edot[0] = Edot[-1] = 0.0
        W = np.zeros((N + 1, 3))
        for k in range(N + 1):
            phi, th = E[k, 0], E[k, 1]
            Wm = np.array([[1, math.sin(phi) * math.tan(th), math.cos(phi) * math.tan(th)],
                           [0, math.cos(phi), -math.sin(phi)],
                           [0, math.sin(phi) / math.cos(th), math.cos(phi) / math.cos(th)]])
            W[k] = np.linalg.solve(Wm, Edot[k])
        X = np.concatenate([P, V, E, W], axis=1)
        F = model.mass * np.diff(V, axis=0) / dt
        wd = np.diff(W, axis=0) / dt
        Wm_ = W[:-1]
        tau = wd @ model.J.T + np.cross(Wm_, Wm_ @ model.J.T)
        U = np.concatenate([F, tau], axis=1)
    else:  # generic: positions only, everything else from the endpoints
        X = np.tile(x_start, (N + 1, 1))
        X[:, model.pos_idx] = P
        U = np.tile(model.steady_control(x_start), (N, 1))
    X[0] = x_start
    X[-1] = x_goal
    return Trajectory(dt, X, U)


def _auto_resolution(world: World) -> float:
    ext = world.upper - world.lower
    target = 40_000 if world.dim == 2 else 150_000
    return float(max(np.prod(ext) / target, 1e-12) ** (1.0 / world.dim))


def grid_path(world: World, start, goal, clearance: float, resolution: float | None = None,
              t: float = 0.0, prune: bool = True) -> np.ndarray:
    """Shortest grid path (A*, 8/26-connected) through cells with ``clearance``.

    Returns waypoints from ``start`` to ``goal``. With ``prune`` redundant
    waypoints are removed when the straight segment keeps the clearance.
    """
    res = resolution or _auto_resolution(world)
    grid = rasterize(world, res, t)
    vals = grid.values
    free = vals >= clearance + res * math.sqrt(world.dim) / 2.0
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)

    def cell_of(p):
        idx = np.round((p - grid.origin) / res).astype(int)
        idx = np.clip(idx, 0, np.array(vals.shape) - 1)
        if free[tuple(idx)]:
            return tuple(idx)
        cand = np.argwhere(free)
        if not len(cand):
            raise UnreachableGoalError("no free grid cell")
        centers = grid.origin + cand * res
        return tuple(cand[int(np.argmin(np.linalg.norm(centers - p, axis=1)))])

    s_idx, g_idx = cell_of(start), cell_of(goal)
    path = astar(free, s_idx, g_idx)
    if not path:
        raise UnreachableGoalError("no grid path between start and goal")
    pts = grid.origin + np.array(path, dtype=float) * res
    pts = np.vstack([start, pts, goal])
    if prune:
        pts = _prune(world, pts, clearance, res, t)
    return pts


def _segment_clear(world, a, b, clearance, step, t):
    L = float(np.linalg.norm(b - a))
    k = max(2, int(math.ceil(L / step)) + 1)
    s = np.linspace(0.0, 1.0, k)[:, None]
    pts = a + s * (b - a)
    if not np.all(world.contains(pts)):
        return False
    return bool(np.all(world.distances(pts, t) >= clearance))


def _prune(world, pts, clearance, res, t):
    out = [pts[0]]
    i = 0
    n = len(pts)
    while i < n - 1:
        j = n - 1
        while j > i + 1 and not _segment_clear(world, pts[i], pts[j], clearance, res / 2, t):
            j -= 1
        out.append(pts[j])
        i = j
    return np.array(out)


def resample_path(pts: np.ndarray, N: int, dt: float, speed: float) -> np.ndarray:
    """Positions at ``t_k = k·dt`` moving along the polyline at ``speed``, then waiting."""
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    L = cum[-1]
    s = np.minimum(np.arange(N + 1) * dt * speed, L)
    out = np.empty((N + 1, pts.shape[1]))
    for j in range(pts.shape[1]):
        out[:, j] = np.interp(s, cum, pts[:, j])
    return out


def initial_guess(model: RobotModel, world: World, x0, x_goal, dt: float, N: int,
                  mode: str = "standstill", clearance: float = 0.0,
                  resolution: float | None = None, t: float = 0.0) -> Trajectory:
    """``standstill`` (feasible for a free ``x0``) or ``grid-path`` (a seed only)."""
    if mode == "standstill":
        return standstill(model, x0, N, dt)
    if mode != "grid-path":
        raise ValueError(f"unknown initialization {mode!r}")
    x0 = np.asarray(x0, dtype=float)
    x_goal = np.asarray(x_goal, dtype=float)
    pts = grid_path(world, x0[model.pos_idx], x_goal[model.pos_idx], clearance, resolution, t)
    L = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    speed = model.v_max / 2.0
    if L > speed * N * dt:
        # horizon too short for half speed; use what is needed, never above 0.9 v̄
        speed = min(0.9 * model.v_max, L / (N * dt))
    P = resample_path(pts, N, dt, speed)
    return lift_positions(model, P, dt, x0, x_goal)


def reference_trajectory(model: RobotModel, x0, x_goal, dt: float, N: int, mode: str = "goal",
                         world: World | None = None, clearance: float = 0.0,
                         resolution: float | None = None, t: float = 0.0) -> Reference:
    """Goal repeated at every stage (default) or a resampled grid path."""
    if mode == "goal":
        return Reference.constant(x_goal, model.nu, N)
    if mode != "grid":
        raise ValueError(f"unknown reference mode {mode!r}")
    x0 = np.asarray(x0, dtype=float)
    x_goal = np.asarray(x_goal, dtype=float)
    if world is None:
        pts = np.vstack([x0[model.pos_idx], x_goal[model.pos_idx]])
    else:
        pts = grid_path(world, x0[model.pos_idx], x_goal[model.pos_idx], clearance, resolution, t)
    P = resample_path(pts, N, dt, model.v_max / 2.0)
    X = np.tile(x_goal, (N + 1, 1))
    X[:, model.pos_idx] = P
    return Reference(X, np.zeros((N, model.nu)))


# ---------------------------------------------------------------------------
# planner
# ---------------------------------------------------------------------------

@dataclass
class PlannerConfig:
    formulation: str = "ciao"
    margin_mode: str = "continuous"
    d_min: float = 0.3
    alpha: float = 1.01
    control_weight: float = 0.1
    terminal_weight: float = 1.0
    eps_rel: float = 1e-3
    max_iters: int = 50
    init: str = "grid-path"
    grid_resolution: float | None = None
    barrier_weight: float = 0.1
    slack_penalty: float | None = None
    feas_tol: float = 1e-6
    divergence_tol: float = 0.5
    grow_centers: bool = True
    nmpc_reference: str = "grid"  # "grid": follow a grid path; "goal": goal at every stage
    obstacle_speed: float = 0.0  # bound on obstacle speed; adds v_obs·Δt to every stage margin
    line_search: LineSearchParams = field(default_factory=LineSearchParams)
    solver: SolverConfig = field(default_factory=SolverConfig)


@dataclass
class IterationResult:
    trajectory: Trajectory
    cost: float
    feasible: bool
    status: str
    solver_status: str
    sqp_iterations: int
    solve_seconds: float
    centers: np.ndarray | None = None
    report: FeasibilityReport | None = None
    fallback: bool = False


@dataclass
class OptimizeResult:
    trajectory: Trajectory
    cost: float
    feasible: bool
    iterations: int
    cost_trace: list
    feasible_trace: list
    sqp_iterations: list
    compute_seconds: list
    report: FeasibilityReport | None = None


@dataclass
class PlannerState:
    trajectory: Trajectory
    x_goal: np.ndarray
    t: float = 0.0
    iteration: int = 0
    centers: np.ndarray | None = None
    reinitializations: int = 0
    path: np.ndarray | None = None  # (M+1, nx) global reference states, dt apart
    progress: int = 0  # index into ``path`` of the last matched reference state


class Planner:
    def __init__(self, model: RobotModel, world: World, config: PlannerConfig | None = None):
        self.model = model
        self.world = world
        self.config = config or PlannerConfig()
        self.objective = Objective.default(model, self.config.alpha, self.config.control_weight,
                                           self.config.terminal_weight)

    # -- helpers --------------------------------------------------------------
    def margins(self, dt: float, N: int) -> Margins:
        """Stage margins; a moving obstacle may close in by ``obstacle_speed·Δt`` per step."""
        c = self.config
        if c.margin_mode == "continuous":
            mg = continuous_margins(self.model.v_max, self.model.a_max, dt, c.d_min, N)
        elif c.margin_mode == "discrete":
            mg = discrete_margins(c.d_min, N, self.model.v_max, self.model.a_max, dt)
        else:
            raise ValueError(f"unknown margin mode {c.margin_mode!r}")
        if c.obstacle_speed > 0:
            mg.per_stage = mg.per_stage + c.obstacle_speed * dt
        return mg

    def build(self, traj: Trajectory, reference: Reference, x0, terminal: str, x_goal=None,
              t: float = 0.0, centers=None, formulation: str | None = None, slack_scale=None):
        kind = formulation or self.config.formulation
        N = traj.N
        mg = self.margins(traj.dt, N)
        form = Formulation(kind, centers=centers, slack_penalty=self.config.slack_penalty,
                           lin_points=traj.positions(self.model) if kind == "linearized" else None,
                           barrier_weight=self.config.barrier_weight)
        nlp = CiaoNlp(self.model, self.world, np.asarray(x0, dtype=float), reference, traj.dt,
                      mg.per_stage, form, self.objective, terminal, x_goal, t, mg.base)
        return assemble(nlp, slack_scale=slack_scale)

    def cost(self, traj: Trajectory, reference: Reference, x0=None) -> float:
        """Tracking cost (the slack penalty is not part of it)."""
        prob = self.build(traj, reference, traj.states[0] if x0 is None else x0, "none",
                          formulation="actual")
        return prob.tracking_cost(prob.vector(traj))

    def check(self, traj: Trajectory, t: float = 0.0, x0=None) -> FeasibilityReport:
        mg = self.margins(traj.dt, traj.N)
        return feasibility_check(self.world, self.model, traj, mg.per_stage, self.config.feas_tol,
                                 t, x0)

    def repair_centers(self, P: np.ndarray, margins: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Move non-free centers until ``d(c) > margin``.

        First along the distance gradient, then along a fixed fan of directions
        at growing radii; the closest free candidate wins.
        """
        C = P.copy()
        w = self.world
        inside = w.contains(C)
        C[~inside] = np.clip(C[~inside], w.lower, w.upper)
        d, g, deg = w.query(C, t)
        bad = np.flatnonzero(~(d > margins * (1 + 1e-9) + 1e-9))
        if not len(bad):
            return C
        n = w.dim
        dirs = [np.eye(n)[i] * s for i in range(n) for s in (1, -1)]
        if n == 2:
            dirs += [np.array([math.cos(a), math.sin(a)]) for a in np.arange(16) * np.pi / 8]
        else:
            rng = np.random.default_rng(12345)
            v = rng.normal(size=(64, 3))
            dirs += list(v / np.linalg.norm(v, axis=1)[:, None])
        dirs = np.array(dirs)
        ext = float(np.max(w.upper - w.lower))
        for k in bad:
            target = margins[k] + 1e-3
            found = None
            if not deg[k]:
                step = target - d[k]
                for _ in range(60):
                    c = C[k] + step * g[k]
                    if w.contains(c)[0] and w.distances(c, t)[0] > target:
                        found = c
                        break
                    step *= 1.5
                    if step > ext:
                        break
            r = 0.02
            while found is None and r <= ext:
                cand = C[k] + r * dirs
                ok = w.contains(cand)
                if ok.any():
                    dd = np.full(len(cand), -np.inf)
                    dd[ok] = w.distances(cand[ok], t)
                    good = np.flatnonzero(dd > target)
                    if len(good):
                        found = cand[good[0]]
                r *= 1.3
            if found is None:
                raise InfeasibleSeedError(f"no free center near knot {k}")
            C[k] = found
        return C

    # -- one CIAO-iteration ------------------------------------------------
    def ciao_iteration(self, traj: Trajectory, reference: Reference, x0, terminal: str = "goal",
                       x_goal=None, t: float = 0.0, solver: SolverConfig | None = None,
                       slack_scale=None) -> IterationResult:
        cfg = self.config
        m = self.model
        x0 = np.asarray(x0, dtype=float)
        mg = self.margins(traj.dt, traj.N)
        in_report = self.check(traj, t, x0)
        in_feasible = in_report.is_feasible and self._terminal_ok(traj, terminal, x_goal)
        in_cost = self.cost(traj, reference, x0)

        centers = None
        if cfg.formulation == "ciao":
            P = traj.positions(m)
            C = self.repair_centers(P, mg.per_stage, t)
            if cfg.grow_centers:
                C, _, _ = grow_centers(self.world, C, t, cfg.line_search)
            centers = C
        prob = self.build(traj, reference, x0, terminal, x_goal, t, centers,
                          slack_scale=slack_scale)
        w0 = prob.vector(traj)
        if prob.lay.ns:
            w0[prob.lay.nw:] = prob.initial_slacks(w0)
        t0 = time.process_time()
        res = solve(prob, w0, solver or cfg.solver)
        secs = time.process_time() - t0
        out = prob.trajectory(res.w)
        report = self.check(out, t, x0)
        slack_ok = (not prob.lay.ns) or float(np.max(prob.slacks(res.w))) <= cfg.feas_tol
        feasible = report.is_feasible and slack_ok and self._terminal_ok(out, terminal, x_goal)
        cost = prob.tracking_cost(res.w)
        status = "ok"
        fallback = False
        if in_feasible and (not feasible or cost > in_cost):
            log.info("iteration fell back to its input (solver %s, feasible=%s)", res.status, feasible)
            out, cost, feasible, report = traj.copy(), in_cost, True, in_report
            status, fallback = "fallback", True
        elif res.status in ("numeric-failure", "infeasible-qp"):
            status = "warning"
        return IterationResult(out, cost, feasible, status, res.status, res.iterations, secs,
                               centers, report, fallback)

    def _terminal_ok(self, traj, terminal, x_goal):
        xN = traj.states[-1]
        tol = max(self.config.feas_tol, 1e-6)
        if terminal == "goal":
            return bool(np.max(np.abs(xN - np.asarray(x_goal))) <= tol)
        if terminal == "full_stop":
            return bool(np.max(np.abs(xN[self.model.vel_idx]), initial=0.0) <= tol)
        return True

    # -- offline optimization --------------------------------------------------
    def optimize_trajectory(self, x_start, x_goal, N: int, dt: float, seed: Trajectory | None = None,
                            eps: float | None = None, max_iters: int | None = None,
                            t: float = 0.0, reference: Reference | None = None) -> OptimizeResult:
        cfg = self.config
        m = self.model
        x_start = np.asarray(x_start, dtype=float)
        x_goal = np.asarray(x_goal, dtype=float)
        mg = self.margins(dt, N)
        if seed is None:
            try:
                seed = initial_guess(m, self.world, x_start, x_goal, dt, N, cfg.init,
                                     mg.stage, cfg.grid_resolution, t)
            except (UnreachableGoalError, OutOfDomainError) as exc:
                raise InitializationError(str(exc)) from exc
        reference = reference or reference_trajectory(m, x_start, x_goal, dt, N)
        max_iters = max_iters or cfg.max_iters
        init_cost = self.cost(seed, reference, x_start)
        eps = eps if eps is not None else cfg.eps_rel * max(init_cost, 1e-12)
        # μ_k is tied to the seed's cost scale so it stays fixed across iterations
        e = m.augment(x_start[None])[0] - m.augment(x_goal[None])[0]
        slack_scale = float(e @ self.objective.Q @ e)
        traj = seed
        costs, feas, sqp, secs = [], [], [], []
        best = None
        prev = None
        it = 0
        for it in range(1, max_iters + 1):
            r = self.ciao_iteration(traj, reference, x_start, "goal", x_goal, t,
                                    slack_scale=slack_scale)
            costs.append(r.cost)
            feas.append(r.feasible)
            sqp.append(r.sqp_iterations)
            secs.append(r.solve_seconds)
            traj = r.trajectory
            if r.feasible and (best is None or r.cost <= best[1]):
                best = (r.trajectory, r.cost, r.report)
            if r.feasible and prev is not None and prev[1] and prev[0] - r.cost <= eps:
                break
            prev = (r.cost, r.feasible)
        if best is None:
            rep = self.check(traj, t, x_start)
            return OptimizeResult(traj, costs[-1] if costs else np.nan, False, it, costs, feas,
                                  sqp, secs, rep)
        return OptimizeResult(best[0], best[1], True, it, costs, feas, sqp, secs, best[2])

    # -- NMPC ------------------------------------------------------------------
    def init_state(self, x0, x_goal, N: int, dt: float, t: float = 0.0) -> PlannerState:
        x0 = np.asarray(x0, dtype=float)
        x_goal = np.asarray(x_goal, dtype=float)
        path = None
        if self.config.nmpc_reference == "grid":
            path = self.reference_path(x0, x_goal, dt, t)
        elif self.config.nmpc_reference != "goal":
            raise ValueError(f"unknown nmpc_reference {self.config.nmpc_reference!r}")
        return PlannerState(standstill(self.model, x0, N, dt), x_goal, t, path=path)

    def reference_path(self, x0, x_goal, dt: float, t: float = 0.0) -> np.ndarray:
        """Grid path from ``x0`` to the goal at half the speed limit, lifted to full states."""
        m = self.model
        clearance = float(self.margins(dt, 1).stage)
        try:
            pts = grid_path(self.world, x0[m.pos_idx], x_goal[m.pos_idx], clearance,
                            self.config.grid_resolution, t)
        except (UnreachableGoalError, OutOfDomainError) as exc:
            raise InitializationError(str(exc)) from exc
        L = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
        speed = m.v_max / 2.0
        M = max(1, int(np.ceil(L / (speed * dt))))
        P = resample_path(pts, M, dt, speed)
        X = lift_positions(m, P, dt, x0, x_goal).states
        X[-1] = x_goal
        return X

    def reference_window(self, state: PlannerState, x, N: int) -> Reference:
        """Next ``N + 1`` path states after the one closest to ``x`` (never moving backwards)."""
        m = self.model
        if state.path is None:
            return Reference.constant(state.x_goal, m.nu, N)
        path = state.path
        lo = state.progress
        hi = min(len(path), lo + 2 * N + 1)
        d = np.linalg.norm(path[lo:hi, m.pos_idx] - x[m.pos_idx], axis=1)
        state.progress = lo + int(np.argmin(d))
        idx = np.minimum(state.progress + 1 + np.arange(N + 1), len(path) - 1)
        return Reference(path[idx], np.zeros((N, m.nu)))

    def nmpc_step(self, state: PlannerState, x_meas, t: float | None = None,
                  solver: SolverConfig | None = None):
        """One receding-horizon step. Returns ``(u0, state, info)``."""
        m = self.model
        x_meas = np.asarray(x_meas, dtype=float)
        t = state.t if t is None else t
        traj = state.trajectory
        N, dt = traj.N, traj.dt
        reinit = False
        if np.max(np.abs(traj.states[0] - x_meas)) > self.config.divergence_tol:
            traj = standstill(m, x_meas, N, dt)
            state.reinitializations += 1
            reinit = True
        reference = self.reference_window(state, x_meas, N)
        t0 = time.process_time()
        r = self.ciao_iteration(traj, reference, x_meas, "full_stop", None, t, solver)
        cpu = time.process_time() - t0
        plan = r.trajectory
        if not r.feasible and not r.fallback:
            # keep going with whatever came back; the slack-free standstill is the safe retreat
            rep = self.check(standstill(m, x_meas, N, dt), t, x_meas)
            if rep.is_feasible and not self.check(plan, t, x_meas).is_feasible:
                plan = standstill(m, x_meas, N, dt)
        u0 = plan.controls[0].copy()
        us = m.steady_control(plan.states[-1])
        shifted = Trajectory(dt, np.vstack([plan.states[1:], plan.states[-1:]]),
                             np.vstack([plan.controls[1:], us[None]]))
        new_state = PlannerState(shifted, state.x_goal, t + dt, state.iteration + 1, r.centers,
                                 state.reinitializations, state.path, state.progress)
        info = {
            "cpu_seconds": cpu,
            "solve_seconds": r.solve_seconds,
            "sqp_iterations": r.sqp_iterations,
            "solver_status": r.solver_status,
            "feasible": r.feasible,
            "fallback": r.fallback,
            "reinitialized": reinit,
            "plan": plan,
        }
        return u0, new_state, info


# ---------------------------------------------------------------------------
# module-level conveniences
# ---------------------------------------------------------------------------

def ciao_iteration(planner: Planner, traj: Trajectory, reference: Reference, x0, dt=None, **kw):
    return planner.ciao_iteration(traj, reference, x0, **kw)


def optimize_trajectory(planner: Planner, x_start, x_goal, dt: float, N: int, **kw):
    return planner.optimize_trajectory(x_start, x_goal, N, dt, **kw)


def nmpc_step(planner: Planner, state: PlannerState, x_meas, t=None, **kw):
    return planner.nmpc_step(state, x_meas, t, **kw)


def in_goal_region(model: RobotModel, x, x_goal, radius: float = GOAL_RADIUS) -> bool:
    e = model.augment(np.asarray(x, dtype=float)[None])[0] - model.augment(np.asarray(x_goal, dtype=float)[None])[0]
    return bool(np.linalg.norm(e) <= radius)


@dataclass
class ClosedLoopTrace:
    dt: float
    times: np.ndarray
    states: np.ndarray  # (steps+1, nx) at control instants
    controls: np.ndarray  # (steps, nu)
    fine_times: np.ndarray
    fine_states: np.ndarray  # plant substeps
    cpu_seconds: np.ndarray
    sqp_iterations: np.ndarray
    min_clearance: np.ndarray  # per step, over the plant substeps
    reached: bool
    steps_to_goal: int | None
    statuses: list

    def to_rows(self):
        rows = []
        for k in range(len(self.controls)):
            rows.append([self.times[k], *self.states[k], *self.controls[k], self.cpu_seconds[k],
                         int(self.sqp_iterations[k]), self.min_clearance[k]])
        return rows


def run_closed_loop(planner: Planner, x0, x_goal, N: int, dt: float, steps: int,
                    substeps: int = 10, noise: float = 0.0, rng=None, stop_at_goal: bool = True,
                    solver: SolverConfig | None = None, plant: RobotModel | None = None,
                    on_step=None, goal_test=None) -> ClosedLoopTrace:
    """Simulate NMPC against the plant integrated at ``dt / substeps`` with zero-order hold.

    The world is frozen at the current time for every solve; the plant's
    clearance is measured against the world at each substep's time.
    ``goal_test(x)`` replaces the default goal region check.
    """
    model = planner.model
    plant = plant or model
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.asarray(x0, dtype=float)
    state = planner.init_state(x, x_goal, N, dt)
    xs, us, cpu, iters, clear, statuses = [x.copy()], [], [], [], [], []
    fine_t, fine_x = [0.0], [x.copy()]
    if goal_test is None:
        def goal_test(xx):
            return in_goal_region(model, xx, x_goal)
    reached = bool(goal_test(x))
    steps_to_goal = 0 if reached else None
    t = 0.0
    for k in range(steps):
        if reached and stop_at_goal:
            break
        u, state, info = planner.nmpc_step(state, x, t, solver)
        seg = simulate(plant, x, u[None], dt, substeps)
        ts = t + np.arange(1, substeps + 1) * dt / substeps
        P = seg[1:, model.pos_idx]
        ins = planner.world.contains(P)
        dmin = 0.0
        if ins.all():
            dmin = min(float(planner.world.distances(P[i:i + 1], ts[i])[0]) for i in range(len(P)))
        x = seg[-1].copy()
        if noise > 0:
            x = x + noise * rng.standard_normal(len(x))
        t += dt
        xs.append(x.copy())
        us.append(u)
        cpu.append(info["cpu_seconds"])
        iters.append(info["sqp_iterations"])
        clear.append(dmin)
        statuses.append(info["solver_status"])
        fine_t.extend(ts.tolist())
        fine_x.extend(seg[1:])
        if on_step is not None:
            on_step(k, x, u, info)
        if not reached and goal_test(x):
            reached = True
            steps_to_goal = k + 1
    return ClosedLoopTrace(dt, np.arange(len(xs)) * dt, np.array(xs),
                           np.array(us).reshape(-1, model.nu), np.array(fine_t), np.array(fine_x),
                           np.array(cpu), np.array(iters), np.array(clear), reached,
                           steps_to_goal, statuses)
