"""Convex QP solvers.

Besides linear constraints the solvers accept convex separable quadratic rows

    g_i(x) = sum_{j in row i} (x[col_j] - center_j)^2 - const_i - x[slack_i] <= 0,

which covers ball constraints with a slack variable as well as speed and force
norm bounds. These rows are handled exactly, so every solution satisfies them
without linearization error.

Two backends:

* ``"clarabel"``: each quadratic row becomes a second-order cone and the
  problem goes to the Clarabel conic interior-point solver. Default when the
  package is importable.
* ``"ipm"``: the in-repo sparse Mehrotra predictor-corrector below. Reliable
  for linear constraints; quadratic rows enter through their curvature in the
  Newton system, which converges more slowly on large instances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib.util import find_spec

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible-qp"
NUMERIC = "numeric-failure"

HAVE_CLARABEL = find_spec("clarabel") is not None


@dataclass
class QuadRows:
    """Convex quadratic inequality rows (see module docstring).

    ``row``, ``col`` and ``center`` have one entry per squared term; ``const``
    and ``slack`` one entry per row (``slack = -1`` means no slack column).
    """

    row: np.ndarray
    col: np.ndarray
    center: np.ndarray
    const: np.ndarray
    slack: np.ndarray

    def __post_init__(self):
        self.row = np.asarray(self.row, dtype=np.int64)
        self.col = np.asarray(self.col, dtype=np.int64)
        self.center = np.asarray(self.center, dtype=float)
        self.const = np.asarray(self.const, dtype=float)
        self.slack = np.asarray(self.slack, dtype=np.int64)

    @property
    def m(self) -> int:
        return len(self.const)

    @staticmethod
    def empty() -> "QuadRows":
        z = np.zeros(0)
        return QuadRows(z, z, z, z, z)

    @staticmethod
    def concat(parts) -> "QuadRows":
        parts = [p for p in parts if p is not None and p.m]
        if not parts:
            return QuadRows.empty()
        offs = np.cumsum([0] + [p.m for p in parts[:-1]])
        return QuadRows(
            np.concatenate([p.row + o for p, o in zip(parts, offs)]),
            np.concatenate([p.col for p in parts]),
            np.concatenate([p.center for p in parts]),
            np.concatenate([p.const for p in parts]),
            np.concatenate([p.slack for p in parts]),
        )

    def value(self, x) -> np.ndarray:
        sq = np.bincount(self.row, (x[self.col] - self.center) ** 2, minlength=self.m)
        s = np.where(self.slack >= 0, x[np.maximum(self.slack, 0)], 0.0)
        return sq - self.const - s

    def jac(self, x, n: int) -> sp.csr_matrix:
        has = self.slack >= 0
        rows = np.concatenate([self.row, np.flatnonzero(has)])
        cols = np.concatenate([self.col, self.slack[has]])
        vals = np.concatenate([2.0 * (x[self.col] - self.center), -np.ones(int(has.sum()))])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.m, n))

    def hess_diag(self, z, n: int) -> np.ndarray:
        return np.bincount(self.col, 2.0 * z[self.row], minlength=n)


@dataclass
class QPSettings:
    tol: float = 1e-9
    max_iter: int = 100
    reg_primal: float = 1e-10
    reg_dual: float = 1e-10
    refine: int = 3
    step_fraction: float = 0.99
    backend: str = "auto"  # "auto", "clarabel" or "ipm"
    polish: bool = True  # Newton refinement on the identified active set


@dataclass
class QPResult:
    x: np.ndarray
    y: np.ndarray  # equality multipliers
    z: np.ndarray  # linear inequality multipliers (rows of G, then bounds)
    zq: np.ndarray  # quadratic row multipliers
    z_lower: np.ndarray
    z_upper: np.ndarray
    status: str
    iterations: int
    residuals: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _csr(M, n):
    if M is None:
        return sp.csr_matrix((0, n))
    return sp.csr_matrix(M, dtype=float)


def solve_qp(P, q, A=None, b=None, G=None, h=None, lb=None, ub=None,
             quad: QuadRows | None = None, settings: QPSettings | None = None,
             x0=None) -> QPResult:
    """Minimize ``½xᵀPx + qᵀx`` s.t. ``Ax = b``, ``Gx ≤ h``, ``lb ≤ x ≤ ub``, quadratic rows.

    Deterministic for identical inputs. The ``ipm`` backend runs Mehrotra
    predictor-corrector on the reduced quasi-definite KKT system, factored
    with SuperLU. With ``settings.polish`` an optimal interior-point result
    is refined on its active set (see :func:`_polish`).
    """
    st = settings or QPSettings()
    res = _solve(P, q, A, b, G, h, lb, ub, quad, st, x0)
    if st.polish and res.status == OPTIMAL:
        res = _polish(P, q, A, b, G, h, lb, ub, quad, res)
    return res


def _solve(P, q, A, b, G, h, lb, ub, quad, st, x0) -> QPResult:
    backend = st.backend
    if backend == "auto":
        backend = "clarabel" if HAVE_CLARABEL else "ipm"
    if backend == "clarabel":
        return _solve_clarabel(P, q, A, b, G, h, lb, ub, quad, st)
    if backend != "ipm":
        raise ValueError(f"unknown QP backend {backend!r}")
    q = np.asarray(q, dtype=float)
    n = len(q)
    P = sp.csc_matrix(P, dtype=float) if P is not None else sp.csc_matrix((n, n))
    P = ((P + P.T) * 0.5).tocsc()
    A = _csr(A, n)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    G = _csr(G, n)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    quad = quad if quad is not None else QuadRows.empty()

    # rows with h = inf are vacuous
    keep = np.isfinite(h)
    G_rows = np.flatnonzero(keep)
    G = G[G_rows]
    h = h[G_rows]
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    il = np.flatnonzero(np.isfinite(lb))
    iu = np.flatnonzero(np.isfinite(ub))
    Gb = sp.vstack([G,
                    sp.csr_matrix((-np.ones(len(il)), (np.arange(len(il)), il)), shape=(len(il), n)),
                    sp.csr_matrix((np.ones(len(iu)), (np.arange(len(iu)), iu)), shape=(len(iu), n))]).tocsr()
    hb = np.concatenate([h, -lb[il], ub[iu]])
    ml, mq, me = Gb.shape[0], quad.m, A.shape[0]
    m = ml + mq

    def cons(x):
        return np.concatenate([Gb @ x - hb, quad.value(x)])

    def cjac(x):
        return sp.vstack([Gb, quad.jac(x, n)]).tocsr() if mq else Gb

    def fail(status, x, y, z, it, res):
        zl = np.zeros(n)
        zu = np.zeros(n)
        zl[il] = z[len(h):len(h) + len(il)]
        zu[iu] = z[len(h) + len(il):ml]
        zg = np.zeros(len(keep))
        zg[G_rows] = z[:len(h)]
        return QPResult(x, y, zg, z[ml:], zl, zu, status, it, res)

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        x = np.zeros(n)
    y = np.zeros(me)
    c = cons(x)
    s = np.maximum(-c, 1.0)
    z = np.ones(m)

    scale_d = 1.0 + np.max(np.abs(q), initial=0.0)
    scale_p = 1.0 + max(np.max(np.abs(b), initial=0.0), np.max(np.abs(hb), initial=0.0))
    AT = A.T.tocsc()
    reg = sp.diags(np.full(me, -st.reg_dual)) if me else None
    res = {}
    it = 0
    for it in range(1, st.max_iter + 1):
        J = cjac(x)
        c = cons(x)
        r_d = P @ x + q + AT @ y + J.T @ z
        r_p = A @ x - b
        r_c = c + s
        mu = float(s @ z) / m if m else 0.0
        res = {
            "stationarity": float(np.max(np.abs(r_d), initial=0.0)),
            "equality": float(np.max(np.abs(r_p), initial=0.0)),
            "inequality": float(np.max(np.abs(r_c), initial=0.0)),
            "mu": mu,
        }
        if not all(np.isfinite(v) for v in res.values()):
            return fail(NUMERIC, x, y, z, it, res)
        if (res["stationarity"] <= st.tol * scale_d and res["equality"] <= st.tol * scale_p
                and res["inequality"] <= st.tol * scale_p and mu <= st.tol):
            return fail(OPTIMAL, x, y, z, it, res)

        w = z / s
        H = P
        if mq:
            H = H + sp.diags(quad.hess_diag(z[ml:], n))
        M = (H + J.T @ sp.diags(w) @ J + sp.identity(n) * st.reg_primal).tocsc()
        K = sp.bmat([[M, AT], [A, reg]], format="csc") if me else M
        try:
            lu = spla.splu(K, permc_spec="COLAMD")
        except RuntimeError:
            return fail(NUMERIC, x, y, z, it, res)
        Kexact = sp.bmat([[(H + J.T @ sp.diags(w) @ J).tocsc(), AT], [A, None]], format="csc") \
            if me else (H + J.T @ sp.diags(w) @ J).tocsc()

        def newton(r_s):
            rhs = np.concatenate([-r_d - J.T @ (w * r_c - r_s / s), -r_p])
            sol = lu.solve(rhs)
            for _ in range(st.refine):
                err = rhs - Kexact @ sol
                if np.max(np.abs(err)) <= 1e-14 * (1 + np.max(np.abs(rhs))):
                    break
                sol = sol + lu.solve(err)
            dx, dy = sol[:n], sol[n:]
            dz = w * (J @ dx + r_c) - r_s / s
            ds = -(r_s + s * dz) / z
            return dx, dy, dz, ds

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, float(np.min(-v[neg] / dv[neg]))) if neg.any() else 1.0

        dx, dy, dz, ds = newton(s * z)
        a_aff = min(max_step(s, ds), max_step(z, dz))
        if m:
            mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dy, dz, ds = newton(s * z + ds * dz - sigma * mu)
        alpha = min(1.0, st.step_fraction * min(max_step(s, ds), max_step(z, dz)))
        if not np.all(np.isfinite(dx)):
            return fail(NUMERIC, x, y, z, it, res)
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds

    feas = max(res.get("equality", 0.0), res.get("inequality", 0.0))
    status = INFEASIBLE if feas > 1e-6 * scale_p else MAX_ITER
    return fail(status, x, y, z, it, res)


_CLARABEL_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": NUMERIC,
    "AlmostDualInfeasible": NUMERIC,
    "MaxIterations": MAX_ITER,
    "MaxTime": MAX_ITER,
    "NumericalError": NUMERIC,
    "InsufficientProgress": NUMERIC,
}


def _solve_clarabel(P, q, A, b, G, h, lb, ub, quad, st: QPSettings) -> QPResult:
    import clarabel

    q = np.asarray(q, dtype=float)
    n = len(q)
    P = sp.csc_matrix(P, dtype=float) if P is not None else sp.csc_matrix((n, n))
    P = sp.triu((P + P.T) * 0.5, format="csc")
    A = _csr(A, n)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    G = _csr(G, n)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    quad = quad if quad is not None else QuadRows.empty()
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    G_rows = np.flatnonzero(np.isfinite(h))
    il = np.flatnonzero(np.isfinite(lb))
    iu = np.flatnonzero(np.isfinite(ub))
    me = A.shape[0]
    nl = len(G_rows) + len(il) + len(iu)

    blocks = [A, G[G_rows],
              sp.csr_matrix((-np.ones(len(il)), (np.arange(len(il)), il)), shape=(len(il), n)),
              sp.csr_matrix((np.ones(len(iu)), (np.arange(len(iu)), iu)), shape=(len(iu), n))]
    rhs = [b, h[G_rows], -lb[il], ub[iu]]
    cones = []
    if me:
        cones.append(clarabel.ZeroConeT(me))
    if nl:
        cones.append(clarabel.NonnegativeConeT(nl))

    # one second-order cone per quadratic row:
    #   with slack   ‖x_J − c‖² ≤ τ ⇔ ‖(x_J − c, (τ−1)/2)‖ ≤ (τ+1)/2, τ = const + x_σ
    #   without      ‖x_J − c‖ ≤ √const
    order = np.argsort(quad.row, kind="stable")
    starts = np.searchsorted(quad.row[order], np.arange(quad.m + 1))
    L = np.diff(starts)
    has = quad.slack >= 0
    dims = L + 1 + has
    cone_start = np.concatenate([[0], np.cumsum(dims)[:-1]]).astype(np.int64)
    r0 = int(dims.sum())
    if quad.m:
        pos = np.arange(len(order)) - np.repeat(starts[:-1], L)
        term_rows = np.repeat(cone_start, L) + 1 + pos
        sl_rows = np.flatnonzero(has)
        tops, bottoms = cone_start[sl_rows], cone_start[sl_rows] + L[sl_rows] + 1
        cone_rows = np.concatenate([term_rows, tops, bottoms])
        cone_cols = np.concatenate([quad.col[order], quad.slack[sl_rows], quad.slack[sl_rows]])
        cone_vals = np.concatenate([-np.ones(len(order)), np.full(2 * len(sl_rows), -0.5)])
        crhs = np.zeros(r0)
        crhs[term_rows] = -quad.center[order]
        tau0 = quad.const[sl_rows]
        crhs[tops] = (tau0 + 1) / 2
        crhs[bottoms] = (tau0 - 1) / 2
        crhs[cone_start[~has]] = np.sqrt(np.maximum(quad.const[~has], 0.0))
        cones += [clarabel.SecondOrderConeT(int(d)) for d in dims]
        blocks.append(sp.csr_matrix((cone_vals, (cone_rows, cone_cols)), shape=(r0, n)))
        rhs.append(crhs)
    Aall = sp.vstack(blocks, format="csc")
    ball = np.concatenate(rhs)

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max(st.max_iter, 50)
    settings.tol_gap_abs = st.tol
    settings.tol_gap_rel = st.tol
    settings.tol_feas = st.tol
    settings.tol_ktratio = 1e-7
    settings.presolve_enable = False
    solver = clarabel.DefaultSolver(P, q, Aall, ball, cones, settings)
    sol = solver.solve()
    status = _CLARABEL_STATUS.get(str(sol.status).split(".")[-1], NUMERIC)
    x = np.asarray(sol.x, dtype=float)
    zall = np.asarray(sol.z, dtype=float)
    if not np.all(np.isfinite(x)):
        status = NUMERIC
        x = np.nan_to_num(x)
        zall = np.nan_to_num(zall)
    y = zall[:me]
    zlin = zall[me:me + nl]
    zg = np.zeros(len(h))
    zg[G_rows] = zlin[:len(G_rows)]
    zl = np.zeros(n)
    zu = np.zeros(n)
    zl[il] = zlin[len(G_rows):len(G_rows) + len(il)]
    zu[iu] = zlin[len(G_rows) + len(il):]
    zc = zall[me + nl:]
    zq = np.zeros(quad.m)
    if quad.m:
        zq[has] = 0.5 * (zc[cone_start[has]] + zc[cone_start[has] + L[has] + 1])
        zq[~has] = zc[cone_start[~has]] / (2.0 * np.sqrt(np.maximum(quad.const[~has], 1e-300)))
    res = {"iterations": int(sol.iterations), "primal_residual": float(sol.r_prim),
           "dual_residual": float(sol.r_dual), "solver_status": str(sol.status)}
    return QPResult(x, y, zg, zq, zl, zu, status, int(sol.iterations), res)


def _polish(P, q, A, b, G, h, lb, ub, quad, res: QPResult, steps: int = 3) -> QPResult:
    """Newton steps on the KKT equations of the active set of an interior-point solution.

    Interior-point methods stop at a small duality gap; on the boundary of a
    second-order cone that leaves a tangential error of order √gap in ``x``.
    Treating the active rows as equalities (quadratic rows as nonlinear ones)
    and taking a few Newton steps removes it. The refined point is kept only
    if it stays feasible, keeps the multiplier signs and lowers the KKT residual.
    """
    q = np.asarray(q, dtype=float)
    n = len(q)
    P = sp.csr_matrix(P, dtype=float) if P is not None else sp.csr_matrix((n, n))
    P = ((P + P.T) * 0.5).tocsr()
    A = _csr(A, n)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    G = _csr(G, n)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    quad = quad if quad is not None else QuadRows.empty()
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    x = res.x
    if not np.all(np.isfinite(x)):
        return res

    # active: multiplier larger than the constraint slack
    fin = np.isfinite(h)
    act_g = np.flatnonzero(fin & (np.asarray(res.z) > np.where(fin, h - G @ x, np.inf)))
    act_l = np.flatnonzero(np.isfinite(lb) & (res.z_lower > x - lb))
    act_u = np.flatnonzero(np.isfinite(ub) & (res.z_upper > ub - x))
    act_q = np.flatnonzero(res.zq > -quad.value(x)) if quad.m else np.zeros(0, dtype=int)
    if len(np.intersect1d(act_l, act_u)):
        return res
    qa = _subrows(quad, act_q)
    me, mg, ml, mu, mq = A.shape[0], len(act_g), len(act_l), len(act_u), len(act_q)
    m = me + mg + ml + mu + mq
    if m > n:
        return res
    Ga = G[act_g]
    Bl = sp.csr_matrix((-np.ones(ml), (np.arange(ml), act_l)), shape=(ml, n))
    Bu = sp.csr_matrix((np.ones(mu), (np.arange(mu), act_u)), shape=(mu, n))

    J_lin = sp.vstack([A, Ga, Bl, Bu]).tocsr()
    JT_lin = J_lin.T.tocsr()
    h_lin = np.concatenate([b, h[act_g], -lb[act_l], ub[act_u]])
    m_lin = m - mq

    def residual(x, lam):
        rd = P @ x + q + JT_lin @ lam[:m_lin]
        if mq:
            rd = rd + qa.jac(x, n).T @ lam[m_lin:]
        return rd, np.concatenate([J_lin @ x - h_lin, qa.value(x)])

    def kkt_norm(x, y, zg, zl, zu, zq):
        r = P @ x + q + A.T @ y + G.T @ zg - zl + zu
        if quad.m:
            r = r + quad.jac(x, n).T @ zq
        return float(np.max(np.abs(r), initial=0.0))

    lam = np.concatenate([res.y, res.z[act_g], res.z_lower[act_l], res.z_upper[act_u],
                          res.zq[act_q]])
    before = kkt_norm(x, res.y, res.z, res.z_lower, res.z_upper, res.zq)
    xk = x.copy()
    # chord method: one factorization at the interior-point solution serves all steps
    rd, rp = residual(xk, lam)
    J = sp.vstack([J_lin, qa.jac(xk, n)]).tocsr() if mq else J_lin
    H = P + sp.diags(qa.hess_diag(lam[m - mq:], n)) if mq else P
    K = sp.bmat([[H + 1e-12 * sp.identity(n), J.T], [J, -1e-12 * sp.identity(m)]], format="csc")
    try:
        lu = spla.splu(K)
    except (RuntimeError, ValueError):
        return res
    for i in range(steps):
        if i:
            rd, rp = residual(xk, lam)
        sol = lu.solve(-np.concatenate([rd, rp]))
        if not np.all(np.isfinite(sol)):
            return res
        xk = xk + sol[:n]
        lam = lam + sol[n:]

    ineq_l = lam[me:]
    if np.any(ineq_l < -1e-9 * max(1.0, np.max(np.abs(lam), initial=0.0))):
        return res
    y = lam[:me]
    zg = np.zeros(len(h))
    zg[act_g] = lam[me:me + mg]
    zl = np.zeros(n)
    zl[act_l] = lam[me + mg:me + mg + ml]
    zu = np.zeros(n)
    zu[act_u] = lam[me + mg + ml:me + mg + ml + mu]
    zq = np.zeros(quad.m)
    zq[act_q] = lam[m - mq:]
    viol = max(np.max(np.abs(A @ xk - b), initial=0.0),
               np.max((G @ xk - h)[fin], initial=0.0),
               np.max(np.where(np.isfinite(lb), lb - xk, 0.0), initial=0.0),
               np.max(np.where(np.isfinite(ub), xk - ub, 0.0), initial=0.0),
               np.max(quad.value(xk), initial=0.0) if quad.m else 0.0)
    viol_before = max(np.max(np.abs(A @ x - b), initial=0.0),
                      np.max((G @ x - h)[fin], initial=0.0),
                      np.max(quad.value(x), initial=0.0) if quad.m else 0.0)
    after = kkt_norm(xk, y, zg, zl, zu, zq)
    if viol > max(1e-10, viol_before) or not after < before:
        return res
    out = QPResult(xk, y, zg, zq, zl, zu, res.status, res.iterations, dict(res.residuals))
    out.residuals["polished"] = True
    return out


def _subrows(quad: QuadRows, rows) -> QuadRows:
    if not len(rows):
        return QuadRows.empty()
    new = np.full(quad.m, -1)
    new[rows] = np.arange(len(rows))
    keep = new[quad.row] >= 0
    return QuadRows(new[quad.row[keep]], quad.col[keep], quad.center[keep], quad.const[rows],
                    quad.slack[rows])
