"""Multiple-shooting transcription of the tracking problem with collision constraints.

Decision vector layout: ``w = [x_0, u_0, x_1, u_1, ..., u_{N-1}, x_N, s_0, ..., s_N]``
where the ``N + 1`` slacks exist only for the ball formulation.

Four collision formulations are available:

* ``ciao``: ``‖p_k − c_k‖² ≤ (d(c_k) − d̲_k)² + s_k`` with fixed centers, ``s_k ≥ 0``
  and a linear penalty ``μ_k s_k`` in the cost. Kept as an exact convex row.
* ``actual``: ``d̲_k − d(p_k) ≤ 0``, linearized by the solver at every iterate.
* ``linearized``: first-order expansion of the actual constraint about fixed
  linearization points (the incoming trajectory).
* ``log-barrier``: ``−β log(d(p_k) − d̲_k)`` added to the cost, no constraint.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import BarrierDomainError, InfeasibleCenterError
from .models import RobotModel, rk4
from .qp import QuadRows
from .world import World

FORMULATIONS = ("ciao", "actual", "linearized", "log-barrier")
TERMINALS = ("goal", "full_stop", "none")


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    dt: float
    states: np.ndarray  # (N+1, nx)
    controls: np.ndarray  # (N, nu)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        if len(self.states) != len(self.controls) + 1 or len(self.controls) < 1:
            raise ValueError("need N >= 1 controls and N + 1 states")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def N(self) -> int:
        return len(self.controls)

    def positions(self, model: RobotModel) -> np.ndarray:
        return self.states[:, model.pos_idx]

    def to_vector(self) -> np.ndarray:
        head = np.concatenate([self.states[:-1], self.controls], axis=1).reshape(-1)
        return np.concatenate([head, self.states[-1]])

    @classmethod
    def from_vector(cls, w, nx: int, nu: int, N: int, dt: float) -> "Trajectory":
        w = np.asarray(w, dtype=float)
        body = w[: N * (nx + nu)].reshape(N, nx + nu)
        xN = w[N * (nx + nu): N * (nx + nu) + nx]
        return cls(dt, np.vstack([body[:, :nx], xN]), body[:, nx:])

    def copy(self) -> "Trajectory":
        return Trajectory(self.dt, self.states.copy(), self.controls.copy())

    def to_dict(self) -> dict:
        return {"dt": self.dt, "states": self.states.tolist(), "controls": self.controls.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Trajectory":
        return cls(float(d["dt"]), np.array(d["states"]), np.array(d["controls"]))


@dataclass
class Reference:
    states: np.ndarray  # (N+1, nx)
    controls: np.ndarray  # (N, nu)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.controls = np.atleast_2d(np.asarray(self.controls, dtype=float))

    @classmethod
    def constant(cls, x_goal, nu: int, N: int) -> "Reference":
        x_goal = np.asarray(x_goal, dtype=float)
        return cls(np.tile(x_goal, (N + 1, 1)), np.zeros((N, nu)))


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

@dataclass
class Objective:
    Q: np.ndarray
    R: np.ndarray
    Q_N: np.ndarray
    alpha: float = 1.01

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.Q_N = np.atleast_2d(np.asarray(self.Q_N, dtype=float))
        for name in ("Q", "R", "Q_N"):
            M = getattr(self, name)
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
        # α = 1 is allowed so plain quadratic tracking is expressible
        if not self.alpha >= 1.0:
            raise ValueError("alpha must be >= 1")
        self._LQ = np.linalg.cholesky(self.Q).T
        self._LR = np.linalg.cholesky(self.R).T
        self._LQN = np.linalg.cholesky(self.Q_N).T

    @classmethod
    def default(cls, model: RobotModel, alpha: float = 1.01, r: float = 0.1,
                terminal_scale: float = 1.0) -> "Objective":
        return cls(np.eye(model.nq), r * np.eye(model.nu), terminal_scale * np.eye(model.nq), alpha)


def stage_cost(objective: Objective, model: RobotModel, x, u, x_ref, u_ref, k: int,
               terminal: bool = False) -> float:
    """``α^k ‖q(x) − q(x̂)‖²_Q + ‖u − û‖²_R``; terminal stages use ``Q_N`` and no control."""
    e = model.augment(np.asarray(x, dtype=float)[None])[0] - model.augment(np.asarray(x_ref, dtype=float)[None])[0]
    if terminal:
        return float(objective.alpha ** k * e @ objective.Q_N @ e)
    du = np.asarray(u, dtype=float) - np.asarray(u_ref, dtype=float)
    return float(objective.alpha ** k * e @ objective.Q @ e + du @ objective.R @ du)


# ---------------------------------------------------------------------------
# collision formulations
# ---------------------------------------------------------------------------

@dataclass
class Formulation:
    kind: str = "ciao"
    centers: np.ndarray | None = None  # ciao, (N+1, dim)
    slack_penalty: np.ndarray | float | None = None  # ciao μ_k; None → automatic
    lin_points: np.ndarray | None = None  # linearized, (N+1, dim)
    barrier_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in FORMULATIONS:
            raise ValueError(f"unknown formulation {self.kind!r}")


def collision_residual(formulation: Formulation, world: World, p, k: int, s: float = 0.0,
                       margin: float = 0.0, t: float = 0.0) -> float:
    """Stage-``k`` collision residual (``≤ 0`` satisfied) for the chosen formulation."""
    p = np.asarray(p, dtype=float)
    kind = formulation.kind
    if kind == "ciao":
        c = np.asarray(formulation.centers, dtype=float)[k]
        dc = float(world.distances(c, t)[0])
        if not dc > margin:
            raise InfeasibleCenterError(f"stage {k}: d(c) = {dc:.6g} <= margin {margin:.6g}")
        return float(np.sum((p - c) ** 2) - (dc - margin) ** 2 - s)
    if kind == "actual":
        return float(margin - world.distances(p, t)[0])
    if kind == "linearized":
        pl = np.asarray(formulation.lin_points, dtype=float)[k]
        d, g, _ = world.query(pl, t)
        return float(margin - d[0] - g[0] @ (p - pl))
    d = float(world.distances(p, t)[0])
    if not d > margin:
        raise BarrierDomainError(f"stage {k}: d(p) = {d:.6g} <= margin {margin:.6g}")
    return 0.0


# ---------------------------------------------------------------------------
# problem definition and assembly
# ---------------------------------------------------------------------------

@dataclass
class CiaoNlp:
    model: RobotModel
    world: World
    x0: np.ndarray
    reference: Reference
    dt: float
    margins: np.ndarray  # (N+1,)
    formulation: Formulation = field(default_factory=Formulation)
    objective: Objective | None = None
    terminal: str = "goal"
    x_goal: np.ndarray | None = None
    t: float = 0.0
    base_margin: float | None = None  # d̲; the position box is inset by d̲_k − d̲

    @property
    def N(self) -> int:
        return len(self.reference.controls)


class Layout:
    def __init__(self, nx: int, nu: int, N: int, slacks: bool):
        self.nx, self.nu, self.N = nx, nu, N
        self.stride = nx + nu
        self.nw = N * self.stride + nx
        self.ns = N + 1 if slacks else 0
        self.n = self.nw + self.ns

    def x(self, k):
        return k * self.stride + np.arange(self.nx)

    def u(self, k):
        return k * self.stride + self.nx + np.arange(self.nu)

    def s(self, k):
        return self.nw + k

    def x_all(self):
        return (np.arange(self.N + 1)[:, None] * self.stride + np.arange(self.nx)).astype(np.int64)

    def u_all(self):
        return (np.arange(self.N)[:, None] * self.stride + self.nx + np.arange(self.nu)).astype(np.int64)


def _block_pattern(row_starts, col_index, nrow):
    """COO indices for dense blocks: block k has rows ``row_starts[k] + i`` and columns ``col_index[k]``."""
    K, ncol = col_index.shape
    rows = (row_starts[:, None, None] + np.arange(nrow)[None, :, None]) * np.ones((1, 1, ncol), dtype=np.int64)
    cols = np.broadcast_to(col_index[:, None, :], (K, nrow, ncol))
    return rows.reshape(-1), cols.reshape(-1)


class AssembledNLP:
    """Solver-facing view of a :class:`CiaoNlp` with exact first derivatives.

    Callbacks: ``objective``, ``objective_grad``, ``objective_hessian`` (Gauss–Newton,
    PSD), ``eq``/``eq_jac``, ``ineq``/``ineq_jac`` (rows the solver linearizes) and
    ``quad`` (convex rows handled exactly). Variable bounds in ``lb``/``ub``.
    """

    def __init__(self, nlp: CiaoNlp, slack_scale: float | None = None):
        self.nlp = nlp
        m = nlp.model
        self.model = m
        N = nlp.N
        self.N = N
        self.dt = float(nlp.dt)
        self.world = nlp.world
        self.t = float(nlp.t)
        self.kind = nlp.formulation.kind
        self.margins = np.broadcast_to(np.asarray(nlp.margins, dtype=float), (N + 1,)).copy()
        self.objective_spec = nlp.objective or Objective.default(m)
        if nlp.terminal not in TERMINALS:
            raise ValueError(f"unknown terminal set {nlp.terminal!r}")
        if nlp.terminal == "goal" and nlp.x_goal is None:
            raise ValueError("goal terminal set needs x_goal")
        self.lay = lay = Layout(m.nx, m.nu, N, self.kind == "ciao")
        self.n = lay.n
        self.x0 = np.asarray(nlp.x0, dtype=float)
        self.X_ref = nlp.reference.states
        self.U_ref = nlp.reference.controls
        self.Q_ref = m.augment(self.X_ref)
        self.xi = lay.x_all()
        self.ui = lay.u_all()
        self.pos_cols = self.xi[:, m.pos_idx]

        # --- objective residual weights
        ob = self.objective_spec
        w = np.sqrt(ob.alpha ** np.arange(N + 1))
        self._Lx = np.array([w[k] * (ob._LQN if k == N else ob._LQ) for k in range(N + 1)])
        self._Lu = ob._LR
        nq = m.nq
        self._r_x_rows, self._r_x_cols = _block_pattern(np.arange(N + 1) * nq, self.xi, nq)
        ru0 = (N + 1) * nq
        self._r_u_rows, self._r_u_cols = _block_pattern(ru0 + np.arange(N) * m.nu, self.ui, m.nu)
        self.n_res = ru0 + N * m.nu

        # --- slack penalty
        self.lin_cost = np.zeros(self.n)
        if self.kind == "ciao":
            mu = nlp.formulation.slack_penalty
            if mu is None:
                scale = slack_scale if slack_scale is not None else self.typical_stage_cost()
                mu = 1e4 * max(scale, 1.0)
            self.mu = np.broadcast_to(np.asarray(mu, dtype=float), (N + 1,)).copy()
            self.lin_cost[lay.nw:] = self.mu
        else:
            self.mu = np.zeros(0)

        # --- bounds
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        xl, xu = m.x_bounds()
        ul, uu = m.u_bounds()
        lb[self.xi[1:]] = xl
        ub[self.xi[1:]] = xu
        lb[self.ui] = ul
        ub[self.ui] = uu
        base = nlp.base_margin if nlp.base_margin is not None else float(self.margins.min())
        inset = np.maximum(self.margins - base, 0.0)
        wl, wu = nlp.world.lower, nlp.world.upper
        lb[self.pos_cols[1:]] = np.maximum(lb[self.pos_cols[1:]], wl + inset[1:, None])
        ub[self.pos_cols[1:]] = np.minimum(ub[self.pos_cols[1:]], wu - inset[1:, None])
        if self.kind == "ciao":
            lb[lay.nw:] = 0.0
        self.lb, self.ub = lb, ub

        # --- equality pattern: x0 fix, defects, terminal
        nx, nu = m.nx, m.nu
        self._dyn_row0 = nx
        rx, cx = _block_pattern(nx + np.arange(N) * nx, self.xi[:-1], nx)
        ru, cu = _block_pattern(nx + np.arange(N) * nx, self.ui, nx)
        self._dx_rows, self._dx_cols, self._du_rows, self._du_cols = rx, cx, ru, cu
        fixed_rows = np.concatenate([np.arange(nx), nx + np.arange(N * nx)])
        fixed_cols = np.concatenate([self.xi[0], self.xi[1:].reshape(-1)])
        fixed_vals = np.concatenate([np.ones(nx), np.ones(N * nx)])
        self.term_row0 = nx + N * nx
        if nlp.terminal == "goal":
            self.term_sel = np.arange(nx)
            self.term_target = np.asarray(nlp.x_goal, dtype=float)
        elif nlp.terminal == "full_stop":
            self.term_sel = np.asarray(m.vel_idx)
            self.term_target = np.zeros(len(self.term_sel))
        else:
            self.term_sel = np.zeros(0, dtype=int)
            self.term_target = np.zeros(0)
        nt = len(self.term_sel)
        self._fixed = (
            np.concatenate([fixed_rows, self.term_row0 + np.arange(nt)]),
            np.concatenate([fixed_cols, self.xi[N][self.term_sel]]),
            np.concatenate([fixed_vals, np.ones(nt)]),
        )
        self.m_eq = self.term_row0 + nt

        # --- exact convex rows: speed / force norms and balls
        parts = []
        for idx, bnd in m.sos_state():
            cols = self.xi[1:][:, idx]
            parts.append(_sos_rows(cols, bnd))
        for idx, bnd in m.sos_control():
            cols = self.ui[:, idx]
            parts.append(_sos_rows(cols, bnd))
        self.path_quad = QuadRows.concat(parts)
        self.ball_quad = QuadRows.empty()
        self.center_dist = None
        if self.kind == "ciao":
            C = np.asarray(nlp.formulation.centers, dtype=float)
            if C.shape != (N + 1, m.dim):
                raise ValueError(f"centers must have shape {(N + 1, m.dim)}")
            dc = nlp.world.distances(C, self.t)
            bad = np.flatnonzero(~(dc > self.margins))
            if len(bad):
                k = int(bad[0])
                raise InfeasibleCenterError(
                    f"stage {k}: d(c) = {dc[k]:.6g} <= margin {self.margins[k]:.6g}")
            self.centers = C
            self.center_dist = dc
            self.radii = dc - self.margins
            self.ball_quad = QuadRows(
                np.repeat(np.arange(N + 1), m.dim), self.pos_cols.reshape(-1), C.reshape(-1),
                self.radii ** 2, lay.nw + np.arange(N + 1))
        self.quad = QuadRows.concat([self.path_quad, self.ball_quad])

        # --- general (linearized by the solver) inequality rows
        self._n_hx = m.h_extra(self.X_ref[:1], self.U_ref[:1])[0].shape[1]
        self.m_hx = self._n_hx * N
        if self.kind == "linearized":
            P = np.asarray(nlp.formulation.lin_points, dtype=float)
            d, g, _ = nlp.world.query(P[1:], self.t)
            self._lin = (P[1:], d, g)
        self.m_col = N if self.kind in ("actual", "linearized") else 0
        self.m_in = self.m_hx + self.m_col
        if self.kind == "log-barrier":
            self.beta = float(nlp.formulation.barrier_weight)

    # -- helpers ------------------------------------------------------------
    def typical_stage_cost(self) -> float:
        """Stage cost of the initial state against the final reference stage."""
        e = self.model.augment(self.x0[None])[0] - self.Q_ref[-1]
        return float(e @ self.objective_spec.Q @ e)

    def split(self, w):
        w = np.asarray(w, dtype=float)
        return w[self.xi], w[self.ui], (w[self.lay.nw:] if self.lay.ns else np.zeros(0))

    def trajectory(self, w) -> Trajectory:
        X, U, _ = self.split(w)
        return Trajectory(self.dt, X, U)

    def slacks(self, w) -> np.ndarray:
        return self.split(w)[2]

    def vector(self, traj: Trajectory, slacks=None) -> np.ndarray:
        w = np.zeros(self.n)
        w[self.xi] = traj.states
        w[self.ui] = traj.controls
        if self.lay.ns:
            w[self.lay.nw:] = 0.0 if slacks is None else slacks
        return w

    def initial_slacks(self, w) -> np.ndarray:
        """Smallest slacks making the ball rows hold at ``w``."""
        if not self.lay.ns:
            return np.zeros(0)
        w = w.copy()
        w[self.lay.nw:] = 0.0
        return np.maximum(self.ball_quad.value(w), 0.0)

    # -- objective ------------------------------------------------------------
    def residuals(self, w):
        X, U, _ = self.split(w)
        eq = self.model.augment(X) - self.Q_ref
        rx = np.einsum("kij,kj->ki", self._Lx, eq)
        ru = (U - self.U_ref) @ self._Lu.T
        return np.concatenate([rx.reshape(-1), ru.reshape(-1)])

    def residual_jac(self, w):
        X, _, _ = self.split(w)
        Jq = self.model.augment_jac(X)
        bx = np.einsum("kij,kjl->kil", self._Lx, Jq)
        bu = np.broadcast_to(self._Lu, (self.N,) + self._Lu.shape)
        rows = np.concatenate([self._r_x_rows, self._r_u_rows])
        cols = np.concatenate([self._r_x_cols, self._r_u_cols])
        vals = np.concatenate([bx.reshape(-1), bu.reshape(-1)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_res, self.n))

    def _barrier_terms(self, w):
        X, _, _ = self.split(w)
        P = X[1:, self.model.pos_idx]
        d, g, _ = self.world.query(P, self.t)
        gap = d - self.margins[1:]
        return gap, g

    def tracking_cost(self, w) -> float:
        r = self.residuals(w)
        return float(r @ r)

    def objective(self, w) -> float:
        val = self.tracking_cost(w) + float(self.lin_cost @ w)
        if self.kind == "log-barrier":
            gap, _ = self._barrier_terms(w)
            if np.any(gap <= 0):
                k = int(np.flatnonzero(gap <= 0)[0]) + 1
                raise BarrierDomainError(f"stage {k}: d(p) - margin = {gap[k - 1]:.6g} <= 0")
            val -= self.beta * float(np.sum(np.log(gap)))
        return val

    def objective_grad(self, w) -> np.ndarray:
        r = self.residuals(w)
        g = 2.0 * (self.residual_jac(w).T @ r) + self.lin_cost
        if self.kind == "log-barrier":
            gap, dg = self._barrier_terms(w)
            if np.any(gap <= 0):
                raise BarrierDomainError("barrier evaluated outside its domain")
            np.add.at(g, self.pos_cols[1:], -self.beta * dg / gap[:, None])
        return g

    def objective_hessian(self, w) -> sp.csc_matrix:
        J = self.residual_jac(w)
        H = 2.0 * (J.T @ J)
        if self.kind == "log-barrier":
            gap, dg = self._barrier_terms(w)
            blocks = self.beta * np.einsum("ki,kj->kij", dg, dg) / (gap ** 2)[:, None, None]
            pc = self.pos_cols[1:]
            rows = np.broadcast_to(pc[:, :, None], blocks.shape).reshape(-1)
            cols = np.broadcast_to(pc[:, None, :], blocks.shape).reshape(-1)
            H = H + sp.csr_matrix((blocks.reshape(-1), (rows, cols)), shape=(self.n, self.n))
        return sp.csc_matrix(H)

    def _stage_multiplier_grad(self, X, U, y, z):
        """Gradient of the nonlinear part of ``yᵀ eq + zᵀ ineq`` per stage.

        Returns ``(G, GN)`` with ``G[k]`` over ``(x_k, u_k)`` and ``GN`` over ``x_N``.
        """
        m, N, nx = self.model, self.N, self.model.nx
        _, Fx, Fu = rk4(m, X[:-1], U, self.dt, jac=True)
        yk = y[nx:nx + N * nx].reshape(N, nx)
        G = -np.concatenate([np.einsum("kij,ki->kj", Fx, yk), np.einsum("kij,ki->kj", Fu, yk)], axis=1)
        _, Jx, Ju = m.h_extra(X[:-1], U)
        zh = z[:self.m_hx].reshape(N, self._n_hx)
        G += np.concatenate([np.einsum("kij,ki->kj", Jx, zh), np.einsum("kij,ki->kj", Ju, zh)], axis=1)
        GN = np.zeros(nx)
        if self.kind == "actual":
            _, g, _ = self.world.query(X[1:, m.pos_idx], self.t)
            zc = -g * z[self.m_hx:self.m_hx + N, None]
            G[1:, m.pos_idx] += zc[:-1]
            GN[m.pos_idx] += zc[-1]
        return G, GN

    def lagrangian_hessian(self, w, y, z) -> sp.csc_matrix:
        """Objective model plus ``∇²(yᵀ eq + zᵀ ineq)``, projected onto PSD per stage.

        Every nonlinear row depends on one stage ``(x_k, u_k)`` only, so the
        constraint curvature is block diagonal and one forward difference per
        stage coordinate (applied to all stages at once) recovers all blocks.
        """
        lay = self.lay
        st, N, nx = lay.stride, self.N, lay.nx
        H = sp.csr_matrix(self.objective_hessian(w))
        X, U, _ = self.split(w)
        Z = np.concatenate([X[:-1], U], axis=1)
        G0, GN0 = self._stage_multiplier_grad(X, U, y, z)
        C = np.zeros((N, st, st))
        CN = np.zeros((nx, nx))
        for j in range(st):
            Zp = Z.copy()
            h = 1e-7 * np.maximum(1.0, np.abs(Z[:, j]))
            Zp[:, j] += h
            Xp = np.vstack([Zp[:, :nx], X[-1:]])
            if j < nx:
                hN = 1e-7 * max(1.0, abs(X[-1, j]))
                Xp[-1, j] += hN
            G, GN = self._stage_multiplier_grad(Xp, Zp[:, nx:], y, z)
            C[:, :, j] = (G - G0) / h[:, None]
            if j < nx:
                CN[:, j] = (GN - GN0) / hN
        stage_cols = np.arange(N)[:, None] * st + np.arange(st)
        last_cols = N * st + np.arange(nx)
        blocks = np.concatenate([C, np.pad(CN, (0, st - nx))[None]], axis=0)
        idx = np.vstack([stage_cols, np.append(last_cols, last_cols[:st - nx])])
        rr = np.broadcast_to(idx[:, :, None], blocks.shape)
        cc = np.broadcast_to(idx[:, None, :], blocks.shape)
        blocks[:N] += np.asarray(H[rr[:N].reshape(-1), cc[:N].reshape(-1)]).reshape(N, st, st)
        blocks[N, :nx, :nx] += H[last_cols][:, last_cols].toarray()
        blocks = 0.5 * (blocks + blocks.transpose(0, 2, 1))
        ev, V = np.linalg.eigh(blocks)
        blocks = np.einsum("kij,kj,klj->kil", V, np.maximum(ev, 0.0), V)
        keep = np.ones(blocks.shape, dtype=bool)
        keep[N, nx:, :] = False
        keep[N, :, nx:] = False
        return sp.csc_matrix((blocks[keep], (rr[keep], cc[keep])), shape=(self.n, self.n))

    # -- equalities -----------------------------------------------------------
    def eq(self, w) -> np.ndarray:
        X, U, _ = self.split(w)
        Xn = rk4(self.model, X[:-1], U, self.dt)
        term = X[-1][self.term_sel] - self.term_target
        return np.concatenate([X[0] - self.x0, (X[1:] - Xn).reshape(-1), term])

    def eq_jac(self, w) -> sp.csr_matrix:
        X, U, _ = self.split(w)
        _, Fx, Fu = rk4(self.model, X[:-1], U, self.dt, jac=True)
        fr, fc, fv = self._fixed
        rows = np.concatenate([fr, self._dx_rows, self._du_rows])
        cols = np.concatenate([fc, self._dx_cols, self._du_cols])
        vals = np.concatenate([fv, -Fx.reshape(-1), -Fu.reshape(-1)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.m_eq, self.n))

    def defects(self, w) -> np.ndarray:
        X, U, _ = self.split(w)
        return X[1:] - rk4(self.model, X[:-1], U, self.dt)

    # -- linearized inequalities ---------------------------------------------
    def ineq(self, w) -> np.ndarray:
        X, U, _ = self.split(w)
        out = [self.model.h_extra(X[:-1], U)[0].reshape(-1)]
        if self.kind == "actual":
            d = self.world.distances(X[1:, self.model.pos_idx], self.t)
            out.append(self.margins[1:] - d)
        elif self.kind == "linearized":
            P0, d0, g0 = self._lin
            P = X[1:, self.model.pos_idx]
            out.append(self.margins[1:] - d0 - np.einsum("ki,ki->k", g0, P - P0))
        return np.concatenate(out)

    def ineq_jac(self, w) -> sp.csr_matrix:
        X, U, _ = self.split(w)
        m = self.model
        _, Jx, Ju = m.h_extra(X[:-1], U)
        nh = self._n_hx
        row0 = np.arange(self.N) * nh
        rx, cx = _block_pattern(row0, self.xi[:-1], nh)
        ru, cu = _block_pattern(row0, self.ui, nh)
        rows = [rx, ru]
        cols = [cx, cu]
        vals = [Jx.reshape(-1), Ju.reshape(-1)]
        if self.kind in ("actual", "linearized"):
            if self.kind == "actual":
                _, g, _ = self.world.query(X[1:, m.pos_idx], self.t)
            else:
                g = self._lin[2]
            rows.append(np.repeat(self.m_hx + np.arange(self.N), m.dim))
            cols.append(self.pos_cols[1:].reshape(-1))
            vals.append(-g.reshape(-1))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.m_in, self.n))

    # -- debugging ------------------------------------------------------------
    def to_dict(self, w=None) -> dict:
        w0 = np.zeros(self.n) if w is None else np.asarray(w, dtype=float)
        Je = self.eq_jac(w0).tocoo()
        Ji = self.ineq_jac(w0).tocoo()

        def fin(v):
            return [None if not np.isfinite(a) else float(a) for a in v]

        return {
            "n": self.n,
            "N": self.N,
            "dt": self.dt,
            "formulation": self.kind,
            "terminal": self.nlp.terminal,
            "lb": fin(self.lb),
            "ub": fin(self.ub),
            "margins": self.margins.tolist(),
            "eq_rows": self.m_eq,
            "ineq_rows": self.m_in,
            "quad_rows": self.quad.m,
            "eq_sparsity": [Je.row.tolist(), Je.col.tolist()],
            "ineq_sparsity": [Ji.row.tolist(), Ji.col.tolist()],
            "centers": None if self.center_dist is None else self.centers.tolist(),
            "radii": None if self.center_dist is None else self.radii.tolist(),
        }

    def dump(self, path, w=None):
        with open(path, "w") as fh:
            json.dump(self.to_dict(w), fh)


def _sos_rows(cols, bound) -> QuadRows:
    K, L = cols.shape
    return QuadRows(np.repeat(np.arange(K), L), cols.reshape(-1), np.zeros(K * L),
                    np.full(K, float(bound) ** 2), np.full(K, -1))


def assemble(nlp: CiaoNlp, **kw) -> AssembledNLP:
    return AssembledNLP(nlp, **kw)


# ---------------------------------------------------------------------------
# feasibility
# ---------------------------------------------------------------------------

@dataclass
class FeasibilityReport:
    max_defect: float
    max_h_violation: float
    min_clearance: float
    max_clearance_violation: float
    is_feasible: bool

    def to_dict(self):
        return dict(self.__dict__)


def feasibility_check(world: World, model: RobotModel, traj: Trajectory, margins,
                      tol: float = 1e-6, t: float = 0.0, x0=None) -> FeasibilityReport:
    """Dynamics defects, path constraints (incl. world bounds) and stage clearance.

    With ``x0`` the initial-state equality is part of the defect.
    """
    X, U = traj.states, traj.controls
    N = traj.N
    margins = np.broadcast_to(np.asarray(margins, dtype=float), (N + 1,))
    defect = float(np.max(np.abs(X[1:] - rk4(model, X[:-1], U, traj.dt)), initial=0.0))
    if x0 is not None:
        defect = max(defect, float(np.max(np.abs(X[0] - np.asarray(x0, dtype=float)))))
    hv = 0.0
    for k in range(N + 1):
        h = model.h(X[k], U[k] if k < N else None)
        if len(h):
            hv = max(hv, float(h.max()))
    P = X[:, model.pos_idx]
    inside = world.contains(P)
    out_dist = np.max(np.maximum(world.lower - P, P - world.upper), axis=1)
    hv = max(hv, float(np.max(out_dist, initial=0.0)))
    d = np.zeros(N + 1)
    if inside.any():
        d[inside] = world.distances(P[inside], t)
    viol = float(np.max(margins - d))
    feasible = bool(np.isfinite(defect) and defect <= tol and hv <= tol and viol <= tol)
    return FeasibilityReport(defect, hv, float(d.min()), viol, feasible)
