"""Compare the compiled kernels against the numpy/Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from ballmpc import _pykernels

try:
    from ballmpc import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    pts = rng.uniform(0, 10, (20000, 3))
    sph_c = rng.uniform(0, 10, (15, 3))
    sph_r = rng.uniform(0.5, 1.0, 15)
    box_lo = rng.uniform(0, 9, (10, 3))
    box_hi = box_lo + rng.uniform(0.5, 1.0, (10, 3))
    occ = rng.random((120, 120)) < 0.02
    free = rng.random((150, 150)) > 0.25
    free[0, 0] = free[-1, -1] = True
    return {
        "obstacle_distance (20k pts, 25 obstacles)":
            ("obstacle_distance", (pts, sph_c, sph_r, box_lo, box_hi, 20.0)),
        "edt (120x120)": ("edt", (occ,)),
        "astar (150x150, 25% blocked)": ("astar", (free, (0, 0), (149, 149))),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':45s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, (name, a) in cases(rng).items():
        py = getattr(_pykernels, name)
        t_py = min(timeit.repeat(lambda: py(*a), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{label:45s} {t_py:10.2f} {'n/a':>10s}")
            continue
        cy = getattr(_ckernels, name)
        t_cy = min(timeit.repeat(lambda: cy(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:45s} {t_py:10.2f} {t_cy:10.2f} {t_py / t_cy:7.1f}x")
    occ = rng.random((60, 60)) < 0.03
    t_loop = min(timeit.repeat(lambda: _pykernels.edt_python(occ), number=1, repeat=2)) * 1e3
    if _ckernels is not None:
        t_cy = min(timeit.repeat(lambda: _ckernels.edt(occ), number=1, repeat=args.repeat)) * 1e3
        print(f"{'edt pure-loop fallback (60x60)':45s} {t_loop:10.2f} {t_cy:10.2f} "
              f"{t_loop / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
