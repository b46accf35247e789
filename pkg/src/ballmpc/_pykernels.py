"""Pure-Python/numpy versions of the hot kernels.

These are the fallback when the compiled ``_ckernels`` extension is not
available, and the reference the compiled versions are tested against.
"""
from __future__ import annotations

import heapq
import itertools
import math

import numpy as np
from scipy import ndimage

TIE_TOL = 1e-9
DEGENERATE_TOL = 1e-6


def obstacle_distance(points, sph_c, sph_r, box_lo, box_hi, d_bar):
    """Distance to the union of spheres and boxes, with its unit gradient.

    Returns ``(dist, grad, degenerate)`` for an ``(M, n)`` batch of points.
    ``dist`` is clamped to ``d_bar``; ``grad`` is zero wherever ``degenerate``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m, n = points.shape
    parts_d = []
    parts_v = []
    if len(sph_r):
        diff = points[:, None, :] - sph_c[None, :, :]
        norm = np.linalg.norm(diff, axis=2)
        parts_d.append(np.maximum(norm - sph_r[None, :], 0.0))
        with np.errstate(invalid="ignore", divide="ignore"):
            parts_v.append(np.where(norm[..., None] > 0, diff / norm[..., None], 0.0))
    if len(box_lo):
        below = box_lo[None, :, :] - points[:, None, :]
        above = points[:, None, :] - box_hi[None, :, :]
        outside = np.where(below > 0, -below, np.where(above > 0, above, 0.0))
        norm = np.linalg.norm(outside, axis=2)
        parts_d.append(norm)
        with np.errstate(invalid="ignore", divide="ignore"):
            parts_v.append(np.where(norm[..., None] > 0, outside / norm[..., None], 0.0))
    if not parts_d:
        return np.full(m, float(d_bar)), np.zeros((m, n)), np.ones(m, dtype=bool)

    d_all = np.concatenate(parts_d, axis=1)
    v_all = np.concatenate(parts_v, axis=1)
    dmin = d_all.min(axis=1)
    near = d_all <= dmin[:, None] + TIE_TOL
    g = (v_all * near[..., None]).sum(axis=1)
    gnorm = np.linalg.norm(g, axis=1)
    degenerate = (gnorm < DEGENERATE_TOL) | (dmin <= 0.0) | (dmin >= d_bar)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(degenerate[:, None], 0.0, g / gnorm[:, None])
    return np.minimum(dmin, d_bar), g, degenerate


def _edt_1d(f):
    # lower envelope of parabolas; f holds squared distances (inf = no site)
    n = len(f)
    out = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = -1
    for q in range(n):
        if not math.isfinite(f[q]):
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -math.inf
            z[1] = math.inf
            continue
        while True:
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                k -= 1
                if k < 0:
                    break
            else:
                break
        k += 1
        v[k] = q
        z[k] = s if k > 0 else -math.inf
        z[k + 1] = math.inf
    if k < 0:
        out[:] = math.inf
        return out
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        p = v[j]
        out[q] = (q - p) ** 2 + f[p]
    return out


def edt_python(occupied):
    """Separable exact EDT in plain Python loops (slow; used in kernel benchmarks)."""
    occupied = np.asarray(occupied, dtype=bool)
    f = np.where(occupied, 0.0, np.inf)
    for axis in range(occupied.ndim):
        f = np.apply_along_axis(_edt_1d, axis, f)
    return np.sqrt(f)


def edt(occupied):
    """Euclidean distance (in cells) from each cell center to the nearest occupied one.

    Returns ``inf`` everywhere when nothing is occupied.
    """
    occupied = np.asarray(occupied, dtype=bool)
    if not occupied.any():
        return np.full(occupied.shape, np.inf)
    return ndimage.distance_transform_edt(~occupied)


def _neighbor_offsets(ndim):
    offs = [d for d in itertools.product((-1, 0, 1), repeat=ndim) if any(d)]
    return [(np.array(d), math.sqrt(sum(abs(x) for x in d))) for d in offs]


def astar(free, start, goal):
    """Shortest 8/26-connected path over ``free`` cells, Euclidean step costs.

    Returns a list of index tuples from start to goal, or ``[]`` if unreachable.
    Ties are broken by insertion order, so results are deterministic.
    """
    free = np.asarray(free, dtype=bool)
    shape = free.shape
    start = tuple(int(i) for i in start)
    goal = tuple(int(i) for i in goal)
    if not (free[start] and free[goal]):
        return []
    offsets = _neighbor_offsets(free.ndim)

    def h(idx):
        return math.sqrt(sum((a - b) ** 2 for a, b in zip(idx, goal)))

    g_cost = {start: 0.0}
    parent = {start: None}
    counter = itertools.count()
    heap = [(h(start), next(counter), start)]
    closed = set()
    while heap:
        _, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal:
            path = []
            while cur is not None:
                path.append(cur)
                cur = parent[cur]
            return path[::-1]
        closed.add(cur)
        gc = g_cost[cur]
        for off, step in offsets:
            nb = tuple(c + int(o) for c, o in zip(cur, off))
            if any(i < 0 or i >= s for i, s in zip(nb, shape)):
                continue
            if not free[nb] or nb in closed:
                continue
            ng = gc + step
            if ng < g_cost.get(nb, math.inf) - 1e-12:
                g_cost[nb] = ng
                parent[nb] = cur
                heapq.heappush(heap, (ng + h(nb), next(counter), nb))
    return []
