"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``BALLMPC_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
obstacle_distance = _pykernels.obstacle_distance
edt = _pykernels.edt
astar = _pykernels.astar

if os.environ.get("BALLMPC_PURE_PYTHON") != "1":
    try:
        from . import _ckernels
    except ImportError:  # pragma: no cover - depends on the build
        _ckernels = None
    if _ckernels is not None:
        BACKEND = "cython"
        obstacle_distance = _ckernels.obstacle_distance
        edt = _ckernels.edt
        astar = _ckernels.astar

__all__ = ["BACKEND", "obstacle_distance", "edt", "astar"]
