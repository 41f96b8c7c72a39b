"""Command-line entry point: ``ccbox benchmark | simulate | validate``.

Exit codes: 0 success, 2 scenario error, 3 solver failure, 4 collision,
5 validation failure.  All CSV files are written by :mod:`ccbox.tables`;
their column orders are listed in the README.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from .bounds import certify_random_cases
from .errors import DomainError, ScenarioError, SolverError
from .ocp import ConstraintKind, solve_ocp, step_collision_probabilities
from .scenario import parse_scenario, preset_path, schema_help
from .simulator import BoxStats, compute_metrics, run_closed_loop
from .tables import write_table

EXIT_OK, EXIT_SCENARIO, EXIT_SOLVER, EXIT_COLLISION, EXIT_VALIDATION = 0, 2, 3, 4, 5

log = logging.getLogger("ccbox")

STATE_COLS = ["p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "psi", "psi_dot"]
INPUT_COLS = ["u_x", "u_y", "u_z", "u_psi"]
BOX_COLS = ["metric", "n", "p25", "p50", "p75", "whisker_lo", "whisker_hi", "min", "max"]
RESULT_COLS = ["kind", "status", "converged", "objective", "relative_objective", "solve_time_s",
               "iterations", "max_violation", "max_step_probability", "alpha_step"]
REPORT_COLS = ["case", "alpha_it", "probability", "threshold", "bound_margin", "passed"]


def _kinds(text):
    try:
        return [ConstraintKind.parse(k.strip()) for k in text.split(",") if k.strip()]
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _out_dir(args, scenario, command) -> Path:
    if args.out is not None:
        out = Path(args.out)
    elif scenario is not None and scenario.output:
        out = Path(scenario.output)
    else:
        out = Path("ccbox-out") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, preset):
    return parse_scenario(args.scenario if args.scenario is not None else preset_path(preset))


def _warn_risk(alpha_step):
    if np.max(alpha_step, initial=0.0) > 0.5:
        log.warning("per-step risk above 0.5: the box is deflated rather than inflated")


# -- benchmark ------------------------------------------------------------------


def cmd_benchmark(args) -> int:
    scenario = _load(args, "benchmark")
    if len(scenario.obstacles) != 1:
        raise ScenarioError(f"benchmark needs exactly one obstacle, got {len(scenario.obstacles)}",
                            key="obstacles", source=args.scenario)
    kinds = args.kinds or list(ConstraintKind)
    inst = scenario.ocp_instance()
    alpha_step = inst.risk.per_step[:, 0]
    _warn_risk(alpha_step)
    order = [ConstraintKind.ELLIPSOID_CC] + [k for k in kinds if k is not ConstraintKind.ELLIPSOID_CC]
    results = {}
    for kind in order:
        try:
            sol, problem = solve_ocp(inst, kind, tol=scenario.tol, max_iter=scenario.max_iter)
        except SolverError as exc:
            log.error("%s: %s", kind.value, exc)
            results[kind] = None
            continue
        prob = step_collision_probabilities(inst, sol.inputs, args.samples, scenario.seed if args.seed is None
                                            else args.seed)
        results[kind] = (sol, problem.obstacle_margins(sol.z)[:, 0], prob[:, 0])

    ref = results[ConstraintKind.ELLIPSOID_CC]
    ours_ok = ref is not None and ref[0].converged
    ref_obj = ref[0].objective if ref is not None else float("nan")
    n = scenario.ocp.n_steps
    rows, traj = [], []
    for kind in kinds:
        res = results[kind]
        if res is None:
            rows.append([kind.value, "solver_error", False] + [float("nan")] * 2 + [float("nan"), 0]
                        + [float("nan")] * 2 + [float(alpha_step.min())] + [float("nan")] * n)
            continue
        sol, margins, prob = res
        rel = 1.0 if kind is ConstraintKind.ELLIPSOID_CC else sol.objective / ref_obj
        rows.append([kind.value, sol.status, sol.converged, sol.objective, rel, sol.wall_time, sol.iterations,
                     sol.max_violation, float(prob.max()), float(alpha_step.min())] + list(margins))
        states = np.vstack([scenario.robot.mean, sol.states])
        inputs = np.vstack([sol.inputs, np.full((1, dyn.NU), np.nan)])
        for k in range(n + 1):
            traj.append([kind.value, k, k * scenario.ocp.dt] + list(states[k]) + list(inputs[k]))
        log.info("%s: %s objective %.6g relative %.4f", kind.value, sol.status, sol.objective, rel)
    out = _out_dir(args, scenario, "benchmark")
    write_table(out / "results.csv", RESULT_COLS + [f"margin_{k}" for k in range(1, n + 1)], rows)
    write_table(out / "trajectories.csv", ["kind", "step", "t"] + STATE_COLS + INPUT_COLS, traj)
    if not ours_ok:
        log.error("ellipsoid_cc did not converge")
        return EXIT_SOLVER
    return EXIT_OK


# -- simulate -------------------------------------------------------------------


def _box_row(name, stats: BoxStats):
    return [name, stats.n, stats.p25, stats.p50, stats.p75, stats.whisker_lo, stats.whisker_hi,
            stats.minimum, stats.maximum]


def write_boxplot(path, label, stats: BoxStats, unit=""):
    """Single box plot drawn from a precomputed summary (no raw data)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "ccbox"
    fig, ax = plt.subplots(figsize=(3.0, 4.0))
    if stats.n:
        ax.bxp([{"med": stats.p50, "q1": stats.p25, "q3": stats.p75, "whislo": stats.whisker_lo,
                 "whishi": stats.whisker_hi, "fliers": [], "label": label}], showfliers=False)
    ax.set_ylabel(f"{label} [{unit}]" if unit else label)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def simlog_rows(log_, n_obs):
    header = ["t"] + STATE_COLS
    for i in range(n_obs):
        header += [f"obs{i}_{a}" for a in ("x", "y", "z")]
        header += [f"obs{i}_mean_{a}" for a in ("x", "y", "z")]
        header += [f"obs{i}_var_{a}" for a in ("x", "y", "z")]
    header += INPUT_COLS + ["sqp_iters", "stale_plan", "unsafe_plan", "solver_error", "slack_used",
                            "min_clearance", "collided"]
    rows = []
    for k in range(len(log_.times)):
        row = [float(log_.times[k])] + list(log_.robot[k])
        for i in range(n_obs):
            row += list(log_.obstacles[k, i]) + list(log_.est_mean[k, i]) + list(log_.est_var[k, i])
        row += list(log_.inputs[k]) + [int(log_.iterations[k]), bool(log_.solver_failed[k]),
                                       bool(log_.plan_unsafe[k]), bool(log_.solver_error[k]),
                                       bool(log_.slack_used[k]),
                                       float(log_.min_clearance[k]), bool(log_.collided[k])]
        rows.append(row)
    return header, rows


def cmd_simulate(args) -> int:
    scenario = _load(args, "crowd")
    setup = scenario.sim_setup()
    if args.kinds:
        if len(args.kinds) != 1:
            raise ScenarioError("simulate takes a single constraint kind", key="kinds")
        setup = replace(setup, kind=args.kinds[0])
    duration = args.duration if args.duration is not None else scenario.simulation.duration
    seed = args.seed if args.seed is not None else scenario.seed
    t0 = time.perf_counter()
    sim = run_closed_loop(setup, duration, seed)
    metrics = compute_metrics(sim)
    out = _out_dir(args, scenario, "simulate")

    header, rows = simlog_rows(sim, sim.n_obstacles)
    write_table(out / "simlog.csv", header, rows)
    summaries = {"distance": BoxStats.from_series(metrics.distance),
                 "ttc_inv": BoxStats.from_series(metrics.ttc_inv),
                 "clearance": BoxStats.from_series(metrics.clearance)}
    if args.timing:
        summaries["solve_ms"] = BoxStats.from_series(1e3 * sim.solve_time)
        write_table(out / "timing.csv", ["t", "solve_ms", "sqp_iters"],
                    [[float(t), 1e3 * float(s), int(i)] for t, s, i in
                     zip(sim.times, sim.solve_time, sim.iterations)])
    write_table(out / "metrics.csv", BOX_COLS, [_box_row(k, v) for k, v in summaries.items()])
    units = {"distance": "m", "ttc_inv": "1/s", "clearance": "m", "solve_ms": "ms"}
    for name, stats in summaries.items():
        if name != "clearance":
            write_boxplot(out / f"{name}.svg", name, stats, units[name])

    n_coll = int(np.count_nonzero(sim.collided))
    n_unsafe = int(np.count_nonzero(sim.plan_unsafe))
    log.info("%d ticks in %.1f s: %d collisions, %d stale plans, %d unverified plans, min clearance %.3f m",
             len(sim.times), time.perf_counter() - t0, n_coll, int(np.count_nonzero(sim.solver_failed)),
             n_unsafe, float(np.min(sim.min_clearance)) if len(sim.times) else float("nan"))
    if n_coll:
        log.error("collision detected in %d ticks", n_coll)
        return EXIT_COLLISION
    n_error = int(np.count_nonzero(sim.solver_error))
    if n_error:
        log.error("solver error in %d ticks", n_error)
        return EXIT_SOLVER
    return EXIT_OK


# -- validate -------------------------------------------------------------------


def cmd_validate(args) -> int:
    if args.alpha is not None:
        if not 0.0 < args.alpha < 1.0:
            raise ScenarioError(f"alpha must lie in the open interval (0, 1), got {args.alpha}", key="alpha")
        _warn_risk(np.array([args.alpha]))
    seed = 0 if args.seed is None else args.seed
    try:
        cases = certify_random_cases(args.cases, args.samples, seed, alpha_override=args.alpha,
                                     inflation_sign=-1.0 if args.deflate else 1.0)
    except DomainError as exc:
        raise ScenarioError(str(exc), key="samples") from None
    out = _out_dir(args, None, "validate")
    write_table(out / "report.csv", REPORT_COLS,
                [[c.index, c.alpha_it, c.probability, c.threshold, c.bound_margin, c.passed] for c in cases])
    failed = [c for c in cases if not c.passed]
    log.info("%d of %d cases within the bound", len(cases) - len(failed), len(cases))
    if failed:
        worst = min(failed, key=lambda c: c.bound_margin)
        log.error("%d cases exceed alpha + 3 sigma (worst: case %d, p=%.5g, allowed %.5g)",
                  len(failed), worst.index, worst.probability, worst.threshold)
        return EXIT_VALIDATION
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    epilog = "exit codes: 0 ok, 2 scenario error, 3 solver failure, 4 collision, 5 validation failure\n\n"
    epilog += "scenario keys:\n" + schema_help()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="ccbox", description="Chance-constrained planning around boxes.",
                                     epilog=epilog, formatter_class=fmt)
    parser.add_argument("-q", "--quiet", action="store_true", help="only print warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, preset):
        p.add_argument("--scenario", help=f"scenario file (default: bundled {preset} preset)" if preset
                       else argparse.SUPPRESS)
        p.add_argument("--seed", type=int, help="random seed (default: the scenario's seed, or 0)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--duration", type=float,
                       help="simulated seconds (default: simulation.duration)" if preset == "crowd"
                       else argparse.SUPPRESS)
        p.add_argument("--kinds", type=_kinds, help="comma-separated constraint kinds: "
                       + ", ".join(k.value for k in ConstraintKind))

    p = sub.add_parser("benchmark", help="one open-loop solve per constraint kind",
                       epilog=epilog, formatter_class=fmt)
    common(p, "benchmark")
    p.add_argument("--samples", type=int, default=100_000, help="Monte Carlo samples per step check")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("simulate", help="closed-loop MPC among pedestrians", epilog=epilog, formatter_class=fmt)
    common(p, "crowd")
    p.add_argument("--timing", action="store_true",
                   help="also write timing.csv and solve_ms.svg (wall-clock, not reproducible)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="Monte Carlo certification of the safety bound",
                       epilog=epilog, formatter_class=fmt)
    common(p, None)
    p.add_argument("--cases", type=int, default=100, help="random boundary configurations")
    p.add_argument("--samples", type=int, default=100_000, help="Monte Carlo samples per case (>= 10000)")
    p.add_argument("--alpha", type=float, help="fix the per-step risk instead of drawing it")
    p.add_argument("--deflate", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except ScenarioError as exc:
        log.error("%s", exc)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
