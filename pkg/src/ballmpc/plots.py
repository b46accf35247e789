"""SVG figures for the CLI. Requires matplotlib (``pip install ballmpc[plot]``)."""
from __future__ import annotations

import numpy as np

from .world import World


def available() -> bool:
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _draw_world(ax, world: World, t: float = 0.0):
    import matplotlib.patches as mp
    for ob in world.obstacles:
        ob = ob.at(t)
        if ob.kind == "sphere":
            ax.add_patch(mp.Circle(np.asarray(ob.center)[:2], ob.radius, color="0.6"))
        else:
            lo, hi = np.asarray(ob.lower)[:2], np.asarray(ob.upper)[:2]
            ax.add_patch(mp.Rectangle(lo, *(hi - lo), color="0.6"))
    ax.set_xlim(world.lower[0], world.upper[0])
    ax.set_ylim(world.lower[1], world.upper[1])
    ax.set_aspect("equal")


def overhead(world: World, paths: dict, path, title: str = ""):
    """Top view of the world with one or more xy paths, keyed by label."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 6))
    _draw_world(ax, world)
    for label, P in paths.items():
        P = np.asarray(P)
        ax.plot(P[:, 0], P[:, 1], lw=1.5, label=label)
        ax.plot(P[0, 0], P[0, 1], "go", ms=4)
        ax.plot(P[-1, 0], P[-1, 1], "r*", ms=6)
    if len(paths) > 1:
        ax.legend(fontsize=8)
    ax.set_title(title)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def cost_trace(costs, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(np.arange(len(costs)), np.maximum(np.asarray(costs, dtype=float), 1e-12), "o-")
    ax.set_xlabel("iteration")
    ax.set_ylabel("tracking cost")
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def boxplots(groups: dict, path, ylabel: str = ""):
    """One box per label; ``None`` entries are dropped."""
    plt = _pyplot()
    labels = list(groups)
    data = [[v for v in groups[k] if v is not None] or [np.nan] for k in labels]
    fig, ax = plt.subplots(figsize=(1.6 * len(labels) + 2, 3.5))
    ax.boxplot(data)
    ax.set_xticks(range(1, len(labels) + 1), labels)
    ax.set_ylabel(ylabel)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def distance_field(values: np.ndarray, extent, path):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(values.T, origin="lower", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax, label="distance [m]")
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
