"""Independent reference computations used by the tests.

None of these share code with the package: they are brute-force or
textbook implementations chosen for obviousness, not speed.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.integrate import solve_ivp
from scipy.sparse import lil_matrix
from scipy.sparse.csgraph import dijkstra


def brute_edt(occupied: np.ndarray) -> np.ndarray:
    """Distance in cells from every cell center to the nearest occupied one."""
    occ = np.argwhere(occupied)
    cells = np.indices(occupied.shape).reshape(occupied.ndim, -1).T
    if not len(occ):
        return np.full(occupied.shape, np.inf)
    out = np.empty(len(cells))
    for i, c in enumerate(cells):
        out[i] = np.sqrt(np.min(np.sum((occ - c) ** 2, axis=1)))
    return out.reshape(occupied.shape)


def point_obstacle_distance(p, obstacles) -> float:
    """Distance to the closest obstacle surface by per-primitive projection."""
    p = np.asarray(p, dtype=float)
    best = np.inf
    for ob in obstacles:
        if ob.kind == "sphere":
            best = min(best, max(0.0, float(np.linalg.norm(p - ob.center)) - ob.radius))
        else:
            q = np.clip(p, ob.lower, ob.upper)
            best = min(best, float(np.linalg.norm(p - q)))
    return best


def grid_shortest_length(free: np.ndarray, start, goal) -> float:
    """Dijkstra over the 8/26-connected grid graph with Euclidean edge lengths."""
    shape = free.shape
    n = int(np.prod(shape))
    G = lil_matrix((n, n))
    offs = [d for d in itertools.product((-1, 0, 1), repeat=free.ndim) if any(d)]
    for idx in np.argwhere(free):
        a = np.ravel_multi_index(tuple(idx), shape)
        for d in offs:
            j = idx + np.array(d)
            if np.all(j >= 0) and np.all(j < shape) and free[tuple(j)]:
                G[a, np.ravel_multi_index(tuple(j), shape)] = np.sqrt(np.sum(np.abs(d)))
    dist = dijkstra(G.tocsr(), indices=np.ravel_multi_index(tuple(start), shape))
    return float(dist[np.ravel_multi_index(tuple(goal), shape)])


def fine_integration(model, x, u, dt: float) -> np.ndarray:
    """Adaptive high-accuracy ODE solve of ``ẋ = f(x, u)`` with ``u`` held constant."""
    u = np.asarray(u, dtype=float)
    sol = solve_ivp(lambda t, y: model.f(y[None], u[None])[0], (0.0, dt), np.asarray(x, dtype=float),
                    method="DOP853", rtol=1e-12, atol=1e-13)
    return sol.y[:, -1]


def central_jacobian(fun, x, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    J = np.zeros((len(f0), len(x)))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h * max(1.0, abs(x[i]))
        J[:, i] = (np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2 * e[i])
    return J


def qp_by_enumeration(P, q, G, h, A=None, b=None):
    """Solve a strictly convex QP by trying every active set (tiny problems only).

    Returns ``(x, objective)`` of the best KKT point found.
    """
    P, q, G, h = (np.asarray(a, dtype=float) for a in (P, q, G, h))
    n = len(q)
    A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    m = len(h)
    best = None
    for k in range(0, min(m, n - len(b)) + 1):
        for act in itertools.combinations(range(m), k):
            E = np.vstack([A, G[list(act)]]) if (len(b) or k) else np.zeros((0, n))
            e = np.concatenate([b, h[list(act)]])
            if len(e) and np.linalg.matrix_rank(E) < len(e):
                continue
            K = np.block([[P, E.T], [E, np.zeros((len(e), len(e)))]]) if len(e) else P
            rhs = np.concatenate([-q, e])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            lam = sol[n + len(b):]
            if np.any(G @ x - h > 1e-9) or np.any(lam < -1e-9):
                continue
            f = 0.5 * x @ P @ x + q @ x
            if best is None or f < best[1] - 1e-12:
                best = (x, f)
    return best


def grid_minimize(fun, feasible, lower, upper, levels: int = 10, points: int = 41,
                  window: float = 3.0):
    """Zooming grid search for a convex problem on a box; returns ``(x, f)``.

    Each level re-centers a box of ``±window`` cells on the incumbent,
    clipped to the original box.
    """
    lower = lo0 = np.asarray(lower, dtype=float)
    upper = hi0 = np.asarray(upper, dtype=float)
    best = None
    for _ in range(levels):
        axes = [np.linspace(lo, hi, points) for lo, hi in zip(lower, upper)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lower))
        ok = feasible(grid)
        if not ok.any():
            break
        vals = fun(grid[ok])
        i = int(np.argmin(vals))
        if best is None or vals[i] < best[1]:
            best = (grid[ok][i], float(vals[i]))
        span = (upper - lower) / (points - 1) * window
        # the window never leaves the original box
        lower = np.maximum(best[0] - span, lo0)
        upper = np.minimum(best[0] + span, hi0)
    return best


def ball_qcqp_dual_optimum(P, q, C, R, lam_max: float = 100.0) -> float:
    """Optimal value of ``min ½xᵀPx + qᵀx s.t. ‖x − c_i‖² ≤ R_i²`` via its concave dual.

    For fixed multipliers the Lagrangian minimizer is a linear solve, so the
    dual has at most three variables and a zooming grid search suffices.
    Every dual value is a lower bound (weak duality), and strong duality holds
    because the balls share an interior point. The multiplier box is widened
    while the best point sits on its upper edge.
    """
    P, q, C, R = (np.asarray(a, dtype=float) for a in (P, q, C, R))
    n = len(q)

    def dual(L):
        H = P[None] + 2 * L.sum(axis=1)[:, None, None] * np.eye(n)[None]
        x = np.linalg.solve(H, (-q[None] + 2 * L @ C)[..., None])[..., 0]
        viol = np.sum((x[:, None, :] - C[None]) ** 2, axis=2) - R ** 2
        return 0.5 * np.einsum("mi,ij,mj->m", x, P, x) + x @ q + np.sum(L * viol, axis=1)

    k = len(R)
    while True:
        best = grid_minimize(lambda L: -dual(np.maximum(L, 0.0)), lambda L: np.ones(len(L), bool),
                             np.zeros(k), np.full(k, lam_max), levels=14, points=21 if k == 3 else 41)
        if np.max(best[0]) < 0.9 * lam_max or lam_max >= 1e8:
            return -best[1]
        lam_max *= 100.0
