"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 solver failure, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__, model
from .errors import ConvergenceError, FraclqtError, InputError, SolverError, SynthesisError
from .fracops import Grid
from .model import Weights, evaluate_cost, sample_reference
from .problemfile import (
    DEFAULT_N_STEPS,
    gains_table,
    load_problem,
    parse_gains_table,
    problem_to_dict,
    read_csv,
    trajectory_table,
    write_csv,
    write_report,
)
from .simulate import simulate_closed_loop
from .synthesis import GainSchedule, synthesize
from .transcribe import solve
from .verify import DEFAULT_TOLERANCES, run_checks

log = logging.getLogger("fraclqt")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3


def _floats(text, flag):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def resolve_problem(args):
    """Problem and grid from ``--problem`` plus ``--grid``/``--alpha`` overrides."""
    name = args.problem
    if name in model.BUILTIN_NAMES:
        problem, grid = model.builtin_problem(name), None
    elif os.path.exists(name):
        problem, grid = load_problem(name)
    else:
        raise InputError(
            f"--problem {name!r} is neither a builtin nor an existing file; "
            f"builtins: {', '.join(model.BUILTIN_NAMES)}"
        )
    if args.alpha is not None:
        problem = problem.replace(alpha=args.alpha)
    if args.grid is not None:
        n = args.grid
    else:
        n = grid.n_steps if grid is not None else DEFAULT_N_STEPS
    if n < 2:
        raise InputError(f"--grid must be at least 2, got {n}")
    return problem, Grid(problem.t_final, n)


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _input_echo(problem, grid):
    try:
        return problem_to_dict(problem, grid)
    except InputError:
        return {"name": problem.name, "alpha": problem.alpha, "t_final": problem.t_final,
                "n_steps": grid.n_steps}


def _base_report(command, problem, grid):
    return {"tool": "fraclqt", "version": __version__, "command": command,
            "input": _input_echo(problem, grid)}


def _write_trajectory(out, grid, x, u, lam, ref):
    header, cols = trajectory_table(grid, x, u, lam, ref)
    write_csv(os.path.join(out, "trajectory.csv"), header, cols)


def _metrics_dict(m):
    return {"ise": m.ise, "max_err": m.max_err, "control_energy": m.control_energy}


def _gains_dict(g: GainSchedule):
    return {"asymmetry": g.asymmetry, "max_condition": g.max_condition,
            "terminal_mismatch": g.terminal_mismatch}


def _synthesize_to(out, problem, grid, command):
    gains, report = synthesize(problem, grid)
    traj = report.trajectory
    ref = sample_reference(problem.reference, grid)
    _write_trajectory(out, grid, traj.x, traj.u, traj.lam, ref)
    header, cols = gains_table(grid, gains.K, gains.l, gains.P_raw, gains.z)
    write_csv(os.path.join(out, "gains.csv"), header, cols)
    cl = simulate_closed_loop(problem.plant, gains, problem.x0, grid, reference=ref)
    doc = _base_report(command, problem, grid)
    doc["solve"] = report.to_dict()
    doc["synthesis"] = _gains_dict(gains)
    doc["closed_loop"] = {"metrics": _metrics_dict(cl.metrics),
                          "cost": evaluate_cost(cl.x, cl.u, problem, grid),
                          "max_abs_x_diff": float(np.max(np.abs(cl.x - traj.x)))}
    write_report(os.path.join(out, "report.json"), doc)
    return gains, report, cl


def cmd_solve(args):
    problem, grid = resolve_problem(args)
    out = _out_dir(args.out)
    traj, report = solve(problem, grid)
    ref = sample_reference(problem.reference, grid)
    _write_trajectory(out, grid, traj.x, traj.u, traj.lam, ref)
    doc = _base_report("solve", problem, grid)
    doc["solve"] = report.to_dict()
    write_report(os.path.join(out, "report.json"), doc)
    print(f"cost {traj.cost:.10g}  stationarity {report.residual_stationarity:.3g}  "
          f"dynamics {report.residual_dynamics:.3g}  costate {report.residual_costate:.3g}")
    return EXIT_OK


def cmd_gains(args):
    problem, grid = resolve_problem(args)
    out = _out_dir(args.out)
    gains, report, cl = _synthesize_to(out, problem, grid, "gains")
    print(f"cost {report.cost:.10g}  asymmetry {gains.asymmetry:.3g}  "
          f"closed-loop ise {cl.metrics.ise:.6g}")
    return EXIT_OK


def cmd_simulate(args):
    problem, grid = resolve_problem(args)
    out = _out_dir(args.out)
    q, r = problem.state_dim, problem.control_dim
    header, data = read_csv(args.gains)
    t, K, l, P, z = parse_gains_table(header, data, q, r)
    if t.size != grid.size or not np.allclose(t, grid.nodes, rtol=0.0, atol=1e-12 * grid.t_final):
        raise InputError(f"{args.gains}: time column does not match the grid (N = {grid.n_steps})")
    gains = GainSchedule(P, K, z, l, grid, alpha=problem.alpha, P_raw=P)
    x0 = problem.x0 if args.x0 is None else np.array(_floats(args.x0, "--x0"))
    if x0.size != q:
        raise InputError(f"--x0 has {x0.size} entries, state dimension is {q}")
    ref = sample_reference(problem.reference, grid)
    res = simulate_closed_loop(problem.plant, gains, x0, grid, reference=ref)
    lam = np.einsum("ijk,jk->ik", P, res.x - ref) + z
    _write_trajectory(out, grid, res.x, res.u, lam, ref)
    doc = _base_report("simulate", problem, grid)
    doc["x0"] = x0
    doc["metrics"] = _metrics_dict(res.metrics)
    doc["cost"] = evaluate_cost(res.x, res.u, problem.replace(x0=x0), grid)
    write_report(os.path.join(out, "report.json"), doc)
    print(f"ise {res.metrics.ise:.6g}  max_err {res.metrics.max_err:.6g}  "
          f"control_energy {res.metrics.control_energy:.6g}")
    return EXIT_OK


def _parse_overrides(items):
    tol = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep or key not in DEFAULT_TOLERANCES:
            raise InputError(
                f"--tol-override expects KEY=VALUE with KEY in {', '.join(DEFAULT_TOLERANCES)}; got {item!r}"
            )
        tol[key] = _floats(val, "--tol-override")[0]
    if tol:
        log.warning("tolerances overridden: %s", tol)
    return tol


def cmd_verify(args):
    problem, grid = resolve_problem(args)
    tol = _parse_overrides(args.tol_override)
    checks, _, report, _ = run_checks(problem, grid, seed=args.seed, tolerances=tol)
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status}  {c.name:<{width}}  {c.value: .3e}  (tol {c.tolerance:.1e}) {c.note}".rstrip())
    if args.out:
        out = _out_dir(args.out)
        doc = _base_report("verify", problem, grid)
        doc["solve"] = report.to_dict()
        doc["checks"] = [{"name": c.name, "value": c.value, "tolerance": c.tolerance,
                          "passed": c.passed, "note": c.note} for c in checks]
        write_report(os.path.join(out, "report.json"), doc)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def cmd_sweep(args):
    problem, grid = resolve_problem(args)
    out = _out_dir(args.out)
    alphas = _floats(args.alpha_list, "--alpha-list") if args.alpha_list else [problem.alpha]
    scales = _floats(args.q_scale_list, "--q-scale-list") if args.q_scale_list else [1.0]
    rows = []
    W = problem.weights
    for a in alphas:
        for s in scales:
            if s <= 0:
                raise InputError(f"--q-scale-list entries must be positive, got {s}")
            Ws = Weights(model.Signal(W.Q.values * s, W.Q.times), W.R, W.T, W.cost_order)
            p = problem.replace(alpha=a, weights=Ws)
            d = _out_dir(os.path.join(out, f"alpha_{a:g}_q_{s:g}"))
            gains, report, cl = _synthesize_to(d, p, grid, "sweep")
            rows.append([a, s, report.cost, cl.metrics.ise, report.residual_stationarity,
                         report.residual_dynamics, report.residual_costate,
                         report.res_eq10, report.res_eq11])
            print(f"alpha {a:g}  q_scale {s:g}  cost {report.cost:.8g}  ise {cl.metrics.ise:.6g}")
    header = ["alpha", "q_scale", "cost", "ise", "residual_stationarity", "residual_dynamics",
              "residual_costate", "res_eq10", "res_eq11"]
    write_csv(os.path.join(out, "summary.csv"), header, np.array(rows).T)
    return EXIT_OK


def cmd_list(args):
    for name in model.BUILTIN_NAMES:
        print(f"{name:<12} {model.builtin_description(name)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fraclqt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fraclqt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--problem", required=True, help="builtin name or problem file path")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--grid", type=int, help=f"number of steps N (default {DEFAULT_N_STEPS})")
        p.add_argument("--alpha", type=float, help="override the fractional order")

    common(sub.add_parser("solve", help="open-loop optimum"))
    common(sub.add_parser("gains", help="synthesize the closed-loop gain schedule"))
    p = sub.add_parser("simulate", help="closed-loop rollout from a gains.csv")
    common(p)
    p.add_argument("--gains", required=True, help="gains.csv written by the gains command")
    p.add_argument("--x0", help="comma-separated initial state")
    p = sub.add_parser("verify", help="oracle cross-checks; exit 3 on failure")
    common(p, out_required=False)
    p.add_argument("--seed", type=int, default=42, help="probe seed")
    p.add_argument("--tol-override", action="append", metavar="KEY=VALUE",
                   help="loosen a tolerance (discouraged)")
    p = sub.add_parser("sweep", help="gains over alpha and Q-scale lists")
    common(p)
    p.add_argument("--alpha-list", help="comma-separated orders")
    p.add_argument("--q-scale-list", help="comma-separated Q multipliers")
    sub.add_parser("list-problems", help="builtin problems")
    return parser


_COMMANDS = {
    "solve": cmd_solve,
    "gains": cmd_gains,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "list-problems": cmd_list,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    logging.captureWarnings(True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, ConvergenceError, SynthesisError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FraclqtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
