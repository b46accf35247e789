"""Free balls and their growth along the distance gradient.

A free ball around a point ``c`` with ``d(c) > margin`` has radius
``d(c) - margin``; by the triangle inequality every point inside it keeps at
least ``margin`` clearance. Moving the center along the normalized gradient
while ``d(c + eta*g) >= d(c) + eta`` holds produces a ball that contains the
original one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotFreeError
from .world import World


@dataclass(frozen=True)
class LineSearchParams:
    eta_min: float = 1e-3
    growth: float = 2.0
    tol: float | None = None  # None: 1e-6 m analytic, half a cell on grids
    max_grow: int = 64
    max_bisect: int = 80

    def resolve_tol(self, world: World) -> float:
        if self.tol is not None:
            return self.tol
        return 0.5 * world.field.cell_size if world.field is not None else 1e-6


@dataclass(frozen=True, eq=False)
class FreeBall:
    center: np.ndarray
    radius: float
    d_at_center: float
    margin: float

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.linalg.norm(points - self.center, axis=1) <= self.radius + tol


def free_ball(world: World, c, margin: float, t: float = 0.0) -> FreeBall:
    c = np.asarray(c, dtype=float)
    d = float(world.distances(c, t)[0])
    if not d > margin:
        raise NotFreeError(f"d(c) = {d:.6g} does not exceed the margin {margin:.6g}")
    return FreeBall(c, d - margin, d, float(margin))


def grow_centers(world: World, centers, t: float = 0.0, params: LineSearchParams | None = None):
    """Line search for all centers at once.

    Returns ``(new_centers, new_distances, eta)``. Centers with a degenerate
    gradient are returned unchanged with ``eta = 0``.
    """
    params = params or LineSearchParams()
    tol = params.resolve_tol(world)
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    d0, g, degenerate = world.query(c, t)

    def ok(idx, eta):
        pts = c[idx] + eta[:, None] * g[idx]
        inside = world.contains(pts)
        good = np.zeros(len(idx), dtype=bool)
        if inside.any():
            d = world.distances(pts[inside], t)
            good[inside] = d >= d0[idx][inside] + eta[inside] - tol
        return good

    m = len(c)
    lo = np.zeros(m)
    hi = np.full(m, np.nan)
    eta = np.full(m, params.eta_min)
    active = np.flatnonzero(~degenerate)
    for _ in range(params.max_grow):
        if not len(active):
            break
        good = ok(active, eta[active])
        lo[active[good]] = eta[active[good]]
        hi[active[~good]] = eta[active[~good]]
        eta[active[good]] *= params.growth
        active = active[good]
    # centers still growing after max_grow keep their last good step
    bis = np.flatnonzero(~degenerate & np.isfinite(hi))
    for _ in range(params.max_bisect):
        bis = bis[hi[bis] - lo[bis] > tol]
        if not len(bis):
            break
        mid = 0.5 * (lo[bis] + hi[bis])
        good = ok(bis, mid)
        lo[bis[good]] = mid[good]
        hi[bis[~good]] = mid[~good]

    new_c = c + lo[:, None] * g
    new_d = d0.copy()
    moved = lo > 0
    if moved.any():
        new_d[moved] = world.distances(new_c[moved], t)
        # never hand back a center with less clearance than the original
        worse = moved.copy()
        worse[moved] = new_d[moved] < d0[moved]
        new_c[worse] = c[worse]
        new_d[worse] = d0[worse]
        lo[worse] = 0.0
    return new_c, new_d, lo


def maximize_free_ball(world: World, c, margin: float, t: float = 0.0,
                       params: LineSearchParams | None = None) -> FreeBall:
    c = np.asarray(c, dtype=float)
    free_ball(world, c, margin, t)  # raises NotFreeError
    new_c, new_d, _ = grow_centers(world, c[None, :], t, params)
    return FreeBall(new_c[0], float(new_d[0]) - margin, float(new_d[0]), float(margin))
