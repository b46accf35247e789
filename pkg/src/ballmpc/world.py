"""Workspace, obstacles and the distance function.

Distances are measured to obstacle *surfaces* and are zero inside an
obstacle. Every world carries a finite upper bound ``d_bar`` and all
distances are clamped to it, which keeps the function bounded and
1-Lipschitz. A world is either *analytic* (exact per-primitive distances)
or *grid* backed (multilinear interpolation of a rasterized field).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import CapacityError, DegenerateGradientError, OutOfDomainError

BOUNDS_TOL = 1e-9
DEFAULT_MAX_CELLS = 4_000_000
GRAD_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Obstacle:
    """A sphere or axis-aligned box, optionally following a scripted path.

    ``schedule`` is a sequence of ``(time, offset)`` pairs; the geometry is
    translated by the linearly interpolated offset (held constant outside
    the scheduled interval).
    """

    kind: str
    center: np.ndarray | None = None
    radius: float = 0.0
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    schedule: tuple = ()

    def __post_init__(self):
        if self.kind == "sphere":
            object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
            if not self.radius > 0:
                raise ValueError(f"sphere radius must be positive, got {self.radius}")
        elif self.kind == "box":
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != hi.shape or not np.all(lo < hi):
                raise ValueError("box needs min < max componentwise")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        else:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        sched = tuple((float(t), np.asarray(off, dtype=float)) for t, off in self.schedule)
        times = [t for t, _ in sched]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be strictly increasing")
        object.__setattr__(self, "schedule", sched)

    @classmethod
    def sphere(cls, center, radius, schedule=()):
        return cls("sphere", center=center, radius=float(radius), schedule=schedule)

    @classmethod
    def box(cls, lower, upper, schedule=()):
        return cls("box", lower=lower, upper=upper, schedule=schedule)

    @property
    def dim(self) -> int:
        return len(self.center) if self.kind == "sphere" else len(self.lower)

    @property
    def is_static(self) -> bool:
        return not self.schedule

    def offset(self, t: float) -> np.ndarray:
        if not self.schedule:
            return np.zeros(self.dim)
        times = np.array([s[0] for s in self.schedule])
        offs = np.array([s[1] for s in self.schedule])
        return np.array([np.interp(t, times, offs[:, i]) for i in range(offs.shape[1])])

    def at(self, t: float) -> "Obstacle":
        """Static copy of the obstacle frozen at time ``t``."""
        off = self.offset(t)
        if self.kind == "sphere":
            return Obstacle.sphere(self.center + off, self.radius)
        return Obstacle.box(self.lower + off, self.upper + off)

    def to_dict(self) -> dict:
        if self.kind == "sphere":
            d = {"type": "sphere", "center": self.center.tolist(), "radius": self.radius}
        else:
            d = {"type": "box", "min": self.lower.tolist(), "max": self.upper.tolist()}
        if self.schedule:
            d["motion"] = [[t, off.tolist()] for t, off in self.schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Obstacle":
        motion = d.get("motion", ())
        if d["type"] == "sphere":
            return cls.sphere(d["center"], d["radius"], motion)
        if d["type"] == "box":
            return cls.box(d["min"], d["max"], motion)
        raise ValueError(f"unknown obstacle type {d['type']!r}")


@dataclass(frozen=True, eq=False)
class DistanceGrid:
    """Distance samples at cell centers; ``origin`` is the center of cell 0."""

    origin: np.ndarray
    cell_size: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def shape(self):
        return self.values.shape

    def centers(self) -> np.ndarray:
        """All cell centers, shape ``values.shape + (n,)``."""
        axes = [self.origin[i] + self.cell_size * np.arange(s) for i, s in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def interpolate(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[1]
        shape = np.array(self.shape)
        u = (points - self.origin) / self.cell_size
        u = np.clip(u, 0.0, shape - 1)
        i0 = np.minimum(np.floor(u).astype(int), np.maximum(shape - 2, 0))
        frac = u - i0
        out = np.zeros(len(points))
        for corner in range(1 << n):
            bits = [(corner >> a) & 1 for a in range(n)]
            idx = tuple(np.minimum(i0[:, a] + bits[a], shape[a] - 1) for a in range(n))
            w = np.ones(len(points))
            for a in range(n):
                w = w * (frac[:, a] if bits[a] else 1.0 - frac[:, a])
            out += w * self.values[idx]
        return out

    def gradient(self, points):
        """Central differences with a one-cell step, normalized.

        Returns ``(grad, degenerate)``.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m, n = points.shape
        g = np.empty((m, n))
        h = self.cell_size
        for a in range(n):
            e = np.zeros(n)
            e[a] = h
            g[:, a] = (self.interpolate(points + e) - self.interpolate(points - e)) / (2 * h)
        norm = np.linalg.norm(g, axis=1)
        degenerate = norm < GRAD_TOL
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(degenerate[:, None], 0.0, g / norm[:, None])
        return g, degenerate


@dataclass(frozen=True, eq=False)
class World:
    lower: np.ndarray
    upper: np.ndarray
    obstacles: tuple = ()
    d_bar: float | None = None
    field: DistanceGrid | None = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or len(lo) not in (2, 3):
            raise ValueError("bounds must be 2-D or 3-D boxes")
        if not np.all(lo < hi):
            raise ValueError("world bounds need lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        obs = tuple(self.obstacles)
        if any(o.dim != len(lo) for o in obs):
            raise ValueError("obstacle dimension does not match the world")
        object.__setattr__(self, "obstacles", obs)
        if self.d_bar is None:
            object.__setattr__(self, "d_bar", float(np.linalg.norm(hi - lo)))
        elif not self.d_bar > 0:
            raise ValueError("d_bar must be positive")
        object.__setattr__(self, "_static", self._primitives(0.0))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def is_static(self) -> bool:
        return all(o.is_static for o in self.obstacles)

    @property
    def mode(self) -> str:
        return "analytic" if self.field is None else "grid"

    def _primitives(self, t):
        n = self.dim
        sph = [o.at(t) if o.schedule else o for o in self.obstacles if o.kind == "sphere"]
        box = [o.at(t) if o.schedule else o for o in self.obstacles if o.kind == "box"]
        return (
            np.array([o.center for o in sph]).reshape(-1, n),
            np.array([o.radius for o in sph], dtype=float),
            np.array([o.lower for o in box]).reshape(-1, n),
            np.array([o.upper for o in box]).reshape(-1, n),
        )

    def primitives(self, t: float = 0.0):
        return self._static if self.is_static else self._primitives(t)

    def at(self, t: float) -> "World":
        """Static world with every obstacle frozen at time ``t``."""
        if self.is_static:
            return self
        return World(self.lower, self.upper, tuple(o.at(t) for o in self.obstacles),
                     self.d_bar, self.field)

    def contains(self, points, tol: float = BOUNDS_TOL) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.lower - tol) & (points <= self.upper + tol), axis=1)

    def _check(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim}-D points, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise OutOfDomainError("non-finite query point")
        inside = self.contains(points)
        if not inside.all():
            bad = points[~inside][0]
            raise OutOfDomainError(f"point {bad} outside world bounds [{self.lower}, {self.upper}]")
        return points

    def query(self, points, t: float = 0.0):
        """Batch distance, unit gradient and degeneracy flags."""
        points = self._check(points)
        if self.field is not None:
            d = np.minimum(self.field.interpolate(points), self.d_bar)
            g, deg = self.field.gradient(points)
            deg = deg | (d <= 0.0) | (d >= self.d_bar)
            g[deg] = 0.0
            return d, g, deg
        return kernels.obstacle_distance(points, *self.primitives(t), self.d_bar)

    def distances(self, points, t: float = 0.0) -> np.ndarray:
        return self.query(points, t)[0]

    def to_dict(self) -> dict:
        d = {
            "bounds": {"lower": self.lower.tolist(), "upper": self.upper.tolist()},
            "d_bar": self.d_bar,
            "obstacles": [o.to_dict() for o in self.obstacles],
        }
        if self.field is not None:
            d["resolution"] = self.field.cell_size
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        world = cls(
            d["bounds"]["lower"],
            d["bounds"]["upper"],
            tuple(Obstacle.from_dict(o) for o in d.get("obstacles", [])),
            d.get("d_bar"),
        )
        if d.get("resolution"):
            world = world.with_field(rasterize(world, d["resolution"]))
        return world

    def with_field(self, grid: DistanceGrid) -> "World":
        return World(self.lower, self.upper, self.obstacles, self.d_bar, grid)


def distance(world: World, p, t: float = 0.0) -> float:
    return float(world.query(p, t)[0][0])


def distance_gradient(world: World, p, t: float = 0.0) -> np.ndarray:
    """Normalized gradient of the distance function at ``p``.

    Raises DegenerateGradientError where no unique ascent direction exists.
    """
    _, g, deg = world.query(p, t)
    if deg[0]:
        raise DegenerateGradientError(f"distance gradient vanishes at {np.asarray(p)}")
    return g[0]


def rasterize(world: World, resolution: float, t: float = 0.0,
              max_cells: int = DEFAULT_MAX_CELLS) -> DistanceGrid:
    """Sample the world on a grid and run an exact Euclidean distance transform.

    A cell is occupied when its center lies inside an obstacle; every value is
    the distance to the nearest occupied cell center, capped at ``d_bar``.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    shape = tuple(max(1, math.ceil((hi - lo) / resolution - 1e-9))
                  for lo, hi in zip(world.lower, world.upper))
    cells = int(np.prod(shape))
    if cells > max_cells:
        raise CapacityError(f"grid of shape {shape} has {cells} cells > budget {max_cells}")
    origin = world.lower + 0.5 * resolution
    grid = DistanceGrid(origin, float(resolution), np.zeros(shape))
    centers = grid.centers().reshape(-1, world.dim)
    analytic = World(world.lower, world.upper, world.obstacles, world.d_bar)
    sph_c, sph_r, box_lo, box_hi = analytic.primitives(t)
    d, _, _ = kernels.obstacle_distance(centers, sph_c, sph_r, box_lo, box_hi, analytic.d_bar)
    occupied = (d <= 0.0).reshape(shape)
    values = np.minimum(kernels.edt(occupied) * resolution, world.d_bar)
    return DistanceGrid(origin, float(resolution), values)


def load_world(path) -> World:
    data = json.loads(Path(path).read_text())
    return World.from_dict(data.get("world", data))


def save_world(world: World, path) -> None:
    Path(path).write_text(json.dumps(world.to_dict(), indent=2))
