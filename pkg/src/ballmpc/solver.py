"""Sequential quadratic programming for the structured NLPs built in :mod:`ballmpc.nlp`.

Each iteration solves a convex QP: Gauss–Newton objective model plus a
Levenberg term, linearized equality and general inequality rows, and the
problem's convex quadratic rows kept exact. Steps are globalized with an
ℓ1 merit function and Armijo backtracking, optionally with a second-order
correction against the Maratos effect.

A problem is any object exposing ``n``, ``lb``, ``ub``, ``quad`` (a
:class:`~ballmpc.qp.QuadRows`), ``objective``, ``objective_grad``,
``objective_hessian``, ``eq``, ``eq_jac``, ``ineq`` and ``ineq_jac``.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import BallMPCError, BarrierDomainError
from .qp import INFEASIBLE, MAX_ITER, NUMERIC, OPTIMAL, QPSettings, QuadRows, solve_qp

STATUSES = (OPTIMAL, MAX_ITER, INFEASIBLE, NUMERIC)


@dataclass
class SolverConfig:
    max_iter: int = 50
    tol_stationarity: float = 1e-6
    tol_feasibility: float = 1e-6
    tol_complementarity: float = 1e-6
    tol_step: float = 1e-9  # a feasible point whose QP step is below this counts as converged
    merit_init: float = 1.0
    merit_factor: float = 1.5  # per-row penalty ν_i ≥ merit_factor · |λ_i|
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-6
    reg_floor: float = 1e-9
    reg_max: float = 1e8
    second_order_correction: bool = True
    damping_threshold: float = 0.1  # accepted step lengths below this raise the regularization
    constraint_curvature: bool = True  # use prob.lagrangian_hessian when available
    qp: QPSettings = field(default_factory=QPSettings)

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if min(self.tol_stationarity, self.tol_feasibility, self.tol_complementarity) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class IterationRecord:
    iteration: int
    merit: float
    objective: float
    stationarity: float
    feasibility: float
    complementarity: float
    step: float
    regularization: float
    seconds: float


@dataclass
class SolveResult:
    w: np.ndarray
    status: str
    iterations: int
    objective: float
    residuals: dict
    timings: list
    trace: list
    message: str = ""

    @property
    def total_time(self) -> float:
        return float(sum(self.timings))


@dataclass
class GenericNLP:
    """Small problems given by plain callables; unspecified parts are empty."""

    n: int
    objective: Callable
    objective_grad: Callable
    objective_hessian: Callable
    eq: Callable | None = None
    eq_jac: Callable | None = None
    ineq: Callable | None = None
    ineq_jac: Callable | None = None
    quad: QuadRows = field(default_factory=QuadRows.empty)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    hessian: Callable | None = None  # (w, y, z) -> Lagrangian Hessian of the general rows

    def lagrangian_hessian(self, w, y, z):
        if self.hessian is None:
            return self.objective_hessian(w)
        return self.hessian(w, y, z)

    def __post_init__(self):
        self.lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.eq is None:
            self.eq = lambda w: np.zeros(0)
            self.eq_jac = lambda w: sp.csr_matrix((0, self.n))
        if self.ineq is None:
            self.ineq = lambda w: np.zeros(0)
            self.ineq_jac = lambda w: sp.csr_matrix((0, self.n))


class _Eval:
    """Cached evaluation of all problem functions at one point."""

    def __init__(self, prob, w):
        self.w = w
        self.f = float(prob.objective(w))
        self.ce = np.asarray(prob.eq(w), dtype=float)
        self.ci = np.asarray(prob.ineq(w), dtype=float)
        self.cq = prob.quad.value(w) if prob.quad.m else np.zeros(0)
        lbv = np.where(np.isfinite(prob.lb), prob.lb - w, 0.0)
        ubv = np.where(np.isfinite(prob.ub), w - prob.ub, 0.0)
        # violation of every row, in the order of the multiplier vector used by ``merit``
        self.parts = np.concatenate([np.abs(self.ce), np.maximum(self.ci, 0), np.maximum(self.cq, 0),
                                     np.maximum(lbv, 0), np.maximum(ubv, 0)])
        self.viol1 = float(self.parts.sum())
        self.viol_inf = float(max(np.max(np.abs(self.ce), initial=0.0),
                                  np.max(self.ci, initial=0.0), np.max(self.cq, initial=0.0),
                                  np.max(lbv, initial=0.0), np.max(ubv, initial=0.0), 0.0))

    def merit(self, nu):
        return self.f + float(np.dot(nu, self.parts))


def _try_eval(prob, w):
    try:
        e = _Eval(prob, w)
    except (BarrierDomainError, FloatingPointError, BallMPCError, ValueError):
        return None
    if not (np.isfinite(e.f) and np.isfinite(e.viol1)):
        return None
    return e


def _elastic_qp(P, q, A, b, G, h, lb, ub, quad, rho, settings, x0):
    """ℓ1-relaxed QP: equalities, linear inequalities and slack-free quadratic rows get penalties."""
    n = len(q)
    me, mi = A.shape[0], G.shape[0]
    free_q = np.flatnonzero(quad.slack < 0) if quad.m else np.zeros(0, dtype=int)
    mq = len(free_q)
    ne = 2 * me + mi + mq
    P2 = sp.block_diag([P, sp.csc_matrix((ne, ne))], format="csc")
    q2 = np.concatenate([q, np.full(ne, rho)])
    I_e = sp.identity(me, format="csr")
    A2 = sp.hstack([A, I_e, -I_e, sp.csr_matrix((me, mi + mq))]).tocsr()
    G2 = sp.hstack([G, sp.csr_matrix((mi, 2 * me)), -sp.identity(mi), sp.csr_matrix((mi, mq))]).tocsr()
    slack = quad.slack.copy()
    slack[free_q] = n + 2 * me + mi + np.arange(mq)
    quad2 = QuadRows(quad.row, quad.col, quad.center, quad.const, slack)
    lb2 = np.concatenate([lb, np.zeros(ne)])
    ub2 = np.concatenate([ub, np.full(ne, np.inf)])
    start = None if x0 is None else np.concatenate([x0, np.ones(ne)])
    res = solve_qp(P2, q2, A2, b, G2, h, lb2, ub2, quad2, settings, x0=start)
    res.x = res.x[:n]
    return res


def _shift_quad(quad: QuadRows, w: np.ndarray) -> QuadRows:
    """Express quadratic rows in the step ``d = x - w``."""
    if not quad.m:
        return quad
    const = quad.const.copy()
    has = quad.slack >= 0
    const[has] += w[quad.slack[has]]
    return QuadRows(quad.row, quad.col, quad.center - w[quad.col], const, quad.slack)


def _kkt(prob, ev, g, Je, Ji, qp):
    """KKT residuals at ``ev.w`` using the multipliers of the latest QP."""
    n = prob.n
    Jq = prob.quad.jac(ev.w, n) if prob.quad.m else sp.csr_matrix((0, n))
    zl = qp.z_lower[:n]
    zu = qp.z_upper[:n]
    y = qp.y[:Je.shape[0]]
    z = qp.z[:Ji.shape[0]]
    zq = qp.zq[:prob.quad.m]
    stat = g + Je.T @ y + Ji.T @ z + Jq.T @ zq - zl + zu
    comp = 0.0
    if len(z):
        comp = max(comp, float(np.max(np.abs(z * ev.ci))))
    if len(zq):
        comp = max(comp, float(np.max(np.abs(zq * ev.cq))))
    fl = np.isfinite(prob.lb)
    fu = np.isfinite(prob.ub)
    if fl.any():
        comp = max(comp, float(np.max(np.abs(zl[fl] * (ev.w[fl] - prob.lb[fl])))))
    if fu.any():
        comp = max(comp, float(np.max(np.abs(zu[fu] * (prob.ub[fu] - ev.w[fu])))))
    lam = np.abs(np.concatenate([y, z, zq, zl, zu]))
    return float(np.max(np.abs(stat), initial=0.0)), comp, lam


def _converged(res: dict, cfg: SolverConfig) -> bool:
    return (res["stationarity"] <= cfg.tol_stationarity
            and res["feasibility"] <= cfg.tol_feasibility
            and res["complementarity"] <= cfg.tol_complementarity)


def solve(prob, w0, config: SolverConfig | None = None) -> SolveResult:
    """Run SQP from ``w0``; never raises on numerical trouble (status says what happened)."""
    cfg = config or SolverConfig()
    w = np.asarray(w0, dtype=float).copy()
    if w.shape != (prob.n,):
        raise ValueError(f"w0 has shape {w.shape}, expected ({prob.n},)")
    # weighted ℓ1 merit: one penalty per row, each kept above its own multiplier
    nu = None
    reg = cfg.reg_floor
    timings, trace = [], []
    history = []  # (f, parts, viol_inf, w) of accepted iterates
    status, message = MAX_ITER, ""
    residuals = {"stationarity": np.inf, "feasibility": np.inf, "complementarity": np.inf}

    ev = _try_eval(prob, w) if np.all(np.isfinite(w)) else None
    if ev is None:
        return SolveResult(w, NUMERIC, 0, np.nan, residuals, [], [], "initial point not evaluable")
    nu = np.full(len(ev.parts), cfg.merit_init)
    history.append((ev.f, ev.parts, ev.viol_inf, w.copy()))
    it = 0  # accepted steps
    last_qp = None
    while True:
        t0 = time.perf_counter()
        try:
            g = np.asarray(prob.objective_grad(w), dtype=float)
            if cfg.constraint_curvature and last_qp is not None \
                    and hasattr(prob, "lagrangian_hessian"):
                H = sp.csc_matrix(prob.lagrangian_hessian(
                    w, last_qp.y[:len(ev.ce)], last_qp.z[:len(ev.ci)]))
            else:
                H = sp.csc_matrix(prob.objective_hessian(w))
            Je = sp.csr_matrix(prob.eq_jac(w))
            Ji = sp.csr_matrix(prob.ineq_jac(w))
        except (BarrierDomainError, FloatingPointError, BallMPCError, ValueError) as exc:
            status, message = NUMERIC, f"derivative evaluation failed: {exc}"
            timings.append(time.perf_counter() - t0)
            break
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H.data))
                and np.all(np.isfinite(Je.data)) and np.all(np.isfinite(Ji.data))):
            status, message = NUMERIC, "non-finite derivatives"
            timings.append(time.perf_counter() - t0)
            break

        if last_qp is not None:
            # convergence check with the multipliers of the step just taken
            stat, comp, _ = _kkt(prob, ev, g, Je, Ji, last_qp)
            scale = max(1.0, float(np.max(np.abs(g))))
            residuals = {"stationarity": stat / scale, "feasibility": ev.viol_inf,
                         "complementarity": comp / scale}
            if _converged(residuals, cfg):
                status = OPTIMAL
                timings[-1] += time.perf_counter() - t0
                break

        # the subproblem is posed in the step d = x - w, which keeps its data well scaled
        lb_d, ub_d = prob.lb - w, prob.ub - w
        quad_d = _shift_quad(prob.quad, w)

        # dividing the model objective by sigma leaves the step unchanged and keeps
        # interior-point iteration counts low when penalties are large
        sigma = max(1.0, float(np.max(np.abs(g), initial=0.0)))

        def qp_solve(b_eq, h_in, reg_):
            P = (H + reg_ * sp.identity(prob.n, format="csc")).tocsc() / sigma
            gs = g / sigma
            res = solve_qp(P, gs, Je, b_eq, Ji, h_in, lb_d, ub_d, quad_d, cfg.qp)
            if res.status != OPTIMAL:
                rho = max(float(nu.max()) / sigma, 1e3 * (1.0 + float(np.max(np.abs(gs)))))
                res = _elastic_qp(P, gs, Je, b_eq, Ji, h_in, lb_d, ub_d, quad_d, rho, cfg.qp, None)
            for name in ("y", "z", "zq", "z_lower", "z_upper"):
                setattr(res, name, np.asarray(getattr(res, name)) * sigma)
            return res

        b_eq = -ev.ce
        h_in = -ev.ci
        accepted = False
        while True:
            qp = qp_solve(b_eq, h_in, reg)
            if qp.status != OPTIMAL:
                status = NUMERIC if qp.status == NUMERIC else INFEASIBLE
                message = f"QP subproblem failed ({qp.status})"
                break
            d = qp.x
            stat, comp, lam = _kkt(prob, ev, g, Je, Ji, qp)
            scale = max(1.0, float(np.max(np.abs(g))))
            residuals = {"stationarity": stat / scale, "feasibility": ev.viol_inf,
                         "complementarity": comp / scale}
            if _converged(residuals, cfg):
                status = OPTIMAL
                break
            if ev.viol_inf <= cfg.tol_feasibility and \
                    float(np.max(np.abs(d), initial=0.0)) <= cfg.tol_step * max(1.0, float(np.max(np.abs(w)))):
                # the local model is stationary at w; the KKT residual only reflects
                # the interior-point accuracy of the subproblem
                status, message = OPTIMAL, "step below tolerance"
                break
            if it >= cfg.max_iter:
                status, message = MAX_ITER, "iteration limit"
                break
            nu = np.maximum(nu, cfg.merit_factor * lam)
            phi0 = ev.merit(nu)
            dphi = float(g @ d) - float(np.dot(nu, ev.parts))
            alpha = 1.0
            trial = None
            while alpha >= cfg.min_step:
                cand = _try_eval(prob, w + alpha * d)
                if cand is not None and cand.merit(nu) <= phi0 + cfg.armijo * alpha * min(dphi, 0.0):
                    trial = cand
                    break
                if alpha == 1.0 and cfg.second_order_correction and cand is not None \
                        and cand.viol1 > ev.viol1 * 0.5:
                    # second-order correction: shift constraint constants by the
                    # linearization error observed at the full step
                    soc = qp_solve(Je @ d - cand.ce, Ji @ d - cand.ci, reg)
                    if soc.status == OPTIMAL:
                        c2 = _try_eval(prob, w + soc.x)
                        if c2 is not None and c2.merit(nu) <= phi0 + cfg.armijo * min(dphi, 0.0):
                            trial = c2
                            d = soc.x
                            break
                alpha *= cfg.backtrack
            if trial is not None:
                accepted = True
                break
            if reg >= cfg.reg_max:
                message = "line search failed at maximum regularization"
                break
            reg = min(cfg.reg_max, max(reg * 100.0, 1e-6))
        if not accepted and (status != MAX_ITER or message == "iteration limit"):
            timings.append(time.perf_counter() - t0)
            trace.append(IterationRecord(it, ev.merit(nu), ev.f, residuals["stationarity"],
                                         ev.viol_inf, residuals["complementarity"], 0.0, reg,
                                         timings[-1]))
            break
        if not accepted:
            timings.append(time.perf_counter() - t0)
            status = MAX_ITER
            break
        it += 1
        step = float(np.max(np.abs(trial.w - w), initial=0.0))
        w = trial.w
        ev = trial
        last_qp = qp
        history.append((ev.f, ev.parts, ev.viol_inf, w.copy()))
        if alpha < cfg.damping_threshold:
            # heavy backtracking: the model overshoots, so damp the next step
            reg = min(cfg.reg_max, max(reg * 10.0, 1e-4 * sigma))
        else:
            reg = max(cfg.reg_floor, reg * 0.1)
        timings.append(time.perf_counter() - t0)
        trace.append(IterationRecord(it, ev.merit(nu), ev.f, residuals["stationarity"],
                                     ev.viol_inf, residuals["complementarity"], step, reg, timings[-1]))

    if status != OPTIMAL and len(history) > 1:
        # best accepted iterate under the final penalty
        best = min(range(len(history)),
                   key=lambda i: (history[i][0] + float(np.dot(nu, history[i][1])), -i))
        w = history[best][3]
        f = history[best][0]
    else:
        f = ev.f
    return SolveResult(w, status, it, f, residuals, timings, trace, message)


def write_trace(result: SolveResult, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "merit", "objective", "stationarity", "feasibility",
                     "complementarity", "step", "regularization", "seconds"])
        for r in result.trace:
            wr.writerow([r.iteration, r.merit, r.objective, r.stationarity, r.feasibility,
                         r.complementarity, r.step, r.regularization, r.seconds])
