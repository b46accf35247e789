"""Command line entry point: ``ballmpc <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, plots
from .errors import BallMPCError
from .planner import run_closed_loop
from .world import load_world, rasterize

FORMULATIONS = ("ciao", "actual", "linearized", "log-barrier")


def _scenario(args) -> bench.Scenario:
    if args.scenario:
        sc = bench.Scenario.from_dict(json.loads(Path(args.scenario).read_text()))
    elif args.kind == "freeflyer":
        sc = bench.generate_benchmark(args.seed)
    else:
        sc = bench.generate_planar(args.seed)
    if args.formulation:
        sc.formulation = args.formulation
    if args.margin_mode:
        sc.margin_mode = args.margin_mode
    if args.horizon:
        sc.N = args.horizon
    if args.dt:
        sc.dt = args.dt
    return sc


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, default=bench._json_default))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def _plots_enabled(args) -> bool:
    if args.no_plots:
        return False
    if not plots.available():
        logging.warning("matplotlib not installed; skipping SVG output")
        return False
    return True


def cmd_plan(args) -> int:
    sc = _scenario(args)
    out = _out(args)
    planner = sc.planner()
    m = planner.model
    res = planner.optimize_trajectory(sc.x_start, sc.x_goal, sc.N, sc.dt, max_iters=args.max_iters)
    traj = res.trajectory
    pm = bench.path_metrics(m, sc.world, traj.states, traj.controls, traj.dt, sc.x_goal)
    summary = {
        "scenario": sc.to_dict(),
        "feasible": res.feasible,
        "iterations": res.iterations,
        "cost": res.cost,
        "cost_trace": res.cost_trace,
        "sqp_iterations": res.sqp_iterations,
        "compute_seconds": res.compute_seconds,
        "time_to_goal": pm.time_to_goal,
        "path_length": pm.path_length,
        "clearance": pm.clearance,
        "linearization_error": bench.linearization_error(m, traj),
        "trajectory": traj.to_dict(),
    }
    _write_json(out / "plan.json", summary)
    t = np.arange(traj.N + 1) * traj.dt
    U = np.vstack([traj.controls, np.full((1, m.nu), np.nan)])
    _write_csv(out / "trajectory.csv",
               ["t"] + [f"x{i}" for i in range(m.nx)] + [f"u{i}" for i in range(m.nu)],
               np.column_stack([t, traj.states, U]).tolist())
    if _plots_enabled(args):
        plots.overhead(sc.world, {"plan": traj.positions(m)}, out / "trajectory.svg")
        plots.cost_trace(res.cost_trace, out / "cost.svg")
    print(f"feasible={res.feasible} iterations={res.iterations} cost={res.cost:.6g} "
          f"clearance={pm.clearance:.4f} -> {out}")
    return 0 if res.feasible else 1


def cmd_nmpc(args) -> int:
    sc = _scenario(args)
    out = _out(args)
    planner = sc.planner()
    m = planner.model
    rng = np.random.default_rng(args.seed)
    tr = run_closed_loop(planner, sc.x_start, sc.x_goal, sc.N, sc.dt, args.steps,
                         noise=args.noise, rng=rng)
    header = (["t"] + [f"x{i}" for i in range(m.nx)] + [f"u{i}" for i in range(m.nu)]
              + ["solve_s", "sqp_iterations", "min_clearance"])
    _write_csv(out / "trace.csv", header, tr.to_rows())
    pm = bench.path_metrics(m, sc.world, tr.states, tr.controls, tr.dt, sc.x_goal)
    _write_json(out / "nmpc.json", {
        "scenario": sc.to_dict(), "steps": len(tr.controls), "reached": tr.reached,
        "time_to_goal": pm.time_to_goal, "path_length": pm.path_length,
        "clearance": pm.clearance, "max_solve_ms": float(np.max(tr.cpu_seconds, initial=0) * 1e3),
        "statuses": tr.statuses,
    })
    if _plots_enabled(args):
        plots.overhead(sc.world, {"closed loop": tr.fine_states[:, m.pos_idx]},
                       out / "trajectory.svg")
    print(f"reached={tr.reached} steps={len(tr.controls)} clearance={pm.clearance:.4f} -> {out}")
    return 0


def cmd_bench_freeflyer(args) -> int:
    out = _out(args)
    results = []
    for seed in range(args.seed, args.seed + args.count):
        r, _ = bench.run_freeflyer(bench.generate_benchmark(seed))
        results.append(r)
        print(f"seed {seed}: feasible={r.feasible} iterations={r.iterations} "
              f"compute={r.total_compute:.2f}s defect={r.linearization_error:.2e}", flush=True)
    rep = bench.freeflyer_report(results)
    bench.save_report(rep, out / "freeflyer.json")
    if _plots_enabled(args):
        plots.boxplots({"iterations": [r.iterations for r in results]}, out / "iterations.svg")
        plots.boxplots({"clearance": [r.clearance for r in results]}, out / "clearance.svg", "m")
    return 0 if rep["feasible"] == rep["scenarios"] else 1


def cmd_bench_formulations(args) -> int:
    out = _out(args)
    scenarios = bench.formulation_suite(args.count, seed=args.seed)
    forms = args.formulations.split(",")

    def progress(f, seed, r):
        print(f"{f:12s} seed {seed:3d}: reached={r.reached} timeout={r.timeout} "
              f"max_ms={max(r.step_ms, default=0):.0f}", flush=True)

    rep = bench.compare_formulations(scenarios, forms, cpu_budget=args.budget,
                                     max_steps=args.steps, progress=progress)
    bench.save_report(rep, out / "formulations.json")
    for f, row in rep["table"].items():
        print(f"{f:12s} " + " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                                     for k, v in row.items()))
    if _plots_enabled(args):
        groups = {f: [max(r["step_ms"], default=None) for r in rep["runs"][f]] for f in forms}
        plots.boxplots(groups, out / "max_ms_per_step.svg", "max ms / step")
    return 0


def cmd_rasterize(args) -> int:
    out = _out(args)
    if args.world:
        world = load_world(args.world)
    else:
        world = _scenario(args).world
    grid = rasterize(world, args.resolution, args.time)
    np.savez_compressed(out / "distance_field.npz", origin=grid.origin, cell_size=grid.cell_size,
                        values=grid.values)
    print(f"grid shape {grid.values.shape}, max distance {grid.values.max():.3f} -> {out}")
    if world.dim == 2 and _plots_enabled(args):
        extent = [world.lower[0], world.upper[0], world.lower[1], world.upper[1]]
        plots.distance_field(grid.values, extent, out / "distance_field.svg")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="ballmpc_out", help="output directory")
    common.add_argument("--no-plots", action="store_true", help="skip SVG output")
    common.add_argument("-v", "--verbose", action="store_true")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", help="scenario JSON file (overrides --kind/--seed)")
    scen.add_argument("--kind", choices=("planar", "freeflyer"), default="planar")
    scen.add_argument("--formulation", choices=FORMULATIONS)
    scen.add_argument("--margin-mode", choices=("continuous", "discrete"))
    scen.add_argument("--horizon", type=int, help="number of steps N")
    scen.add_argument("--dt", type=float, help="step length in seconds")

    p = argparse.ArgumentParser(prog="ballmpc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", parents=[common, scen], help="offline trajectory optimization")
    sp.add_argument("--max-iters", type=int)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("nmpc", parents=[common, scen], help="closed-loop NMPC simulation")
    sp.add_argument("--steps", type=int, default=300)
    sp.add_argument("--noise", type=float, default=0.0, help="plant state noise std")
    sp.set_defaults(func=cmd_nmpc)

    sp = sub.add_parser("bench-freeflyer", parents=[common], help="12-state benchmark suite")
    sp.add_argument("--count", type=int, default=20)
    sp.set_defaults(func=cmd_bench_freeflyer)

    sp = sub.add_parser("bench-formulations", parents=[common],
                        help="closed-loop comparison of collision formulations")
    sp.add_argument("--count", type=int, default=bench.FORMULATION_SCENARIOS)
    sp.add_argument("--formulations", default=",".join(FORMULATIONS))
    sp.add_argument("--budget", type=float, default=1.0, help="CPU seconds per step")
    sp.add_argument("--steps", type=int, default=300)
    sp.set_defaults(func=cmd_bench_formulations)

    sp = sub.add_parser("rasterize", parents=[common, scen], help="distance field of a world")
    sp.add_argument("--world", help="world JSON file")
    sp.add_argument("--resolution", type=float, default=0.05)
    sp.add_argument("--time", type=float, default=0.0)
    sp.set_defaults(func=cmd_rasterize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BallMPCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
