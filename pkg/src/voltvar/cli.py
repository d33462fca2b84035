"""Command-line interface: condition checks, simulation, sweeps, export.

Exit codes: 0 success (condition holds / run converged), 1 runtime error,
2 condition fails or no convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .control import DEFAULT_DEADBAND
from .dynamics import (
    ControllerConfig,
    check_d1_condition,
    d3_stepsize_bound,
    simulate,
    solve_equilibrium,
)
from .exceptions import MaxIterations
from .feeder_io import feeder_hash, load_feeder, save_feeder
from .network import sensitivity_matrices


def _fmt(x):
    return repr(float(x))


def _add_common(p):
    p.add_argument("--feeder", default="builtin:sce42",
                   help="feeder JSON path or builtin:<name> (default builtin:sce42)")
    p.add_argument("--alpha", type=float, default=None,
                   help="override droop slope at every inverter bus")
    p.add_argument("--deadband", type=float, default=None,
                   help=f"override droop deadband width (default {DEFAULT_DEADBAND} p.u.)")
    p.add_argument("--load-scale", type=float, default=1.0)
    p.add_argument("--power-factor", type=float, default=0.9)
    p.add_argument("--pv-fraction", type=float, default=1.0,
                   help="inverter real output as a fraction of nameplate")
    p.add_argument("--oversize", type=float, default=1.1,
                   help="inverter apparent capacity as a multiple of nameplate")
    p.add_argument("--tan-rho", type=float, default=None,
                   help="power-factor limit tan(rho); omitted = capacity circle only")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output file or prefix")


def _load(args):
    return load_feeder(
        args.feeder,
        power_factor=args.power_factor,
        load_scale=args.load_scale,
        pv_operating_fraction=args.pv_fraction,
        inverter_oversize=args.oversize,
        tan_rho=args.tan_rho,
    )


def _config(args, feeder, kind="d1"):
    return ControllerConfig.from_feeder(
        feeder,
        kind,
        alpha=args.alpha,
        deadband=args.deadband,
        gamma2=getattr(args, "gamma2", None),
        gamma3=getattr(args, "gamma3", None),
    )


def _run_meta(args, feeder, extra=None):
    meta = {
        "version": __version__,
        "feeder": args.feeder,
        "feeder_hash": feeder_hash(feeder),
        "alpha": args.alpha,
        "deadband": args.deadband,
        "load_scale": args.load_scale,
        "power_factor": args.power_factor,
        "pv_fraction": args.pv_fraction,
        "oversize": args.oversize,
        "tan_rho": args.tan_rho,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "seed": args.seed,
        "floored_lines": list(feeder.meta.get("floored_lines", [])),
    }
    meta.update(extra or {})
    return meta


def write_trajectory_csv(trajectory, path, include_objective=True):
    """CSV export: header ``t, q_1..q_n, v_1..v_n, residual[, F]``."""
    n = trajectory.q.shape[1]
    cols = ["t"] + [f"q_{i}" for i in range(1, n + 1)] + [f"v_{i}" for i in range(1, n + 1)]
    cols.append("residual")
    with_f = include_objective and trajectory.objective is not None
    if with_f:
        cols.append("F")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i, t in enumerate(trajectory.times):
            row = [str(int(t))]
            row += [_fmt(x) for x in trajectory.q[i]]
            row += [_fmt(x) for x in trajectory.v[i]]
            row.append(_fmt(trajectory.residuals[i]))
            if with_f:
                row.append(_fmt(trajectory.objective[i]))
            fh.write(",".join(row) + "\n")


def cmd_check(args):
    feeder = _load(args)
    mats = sensitivity_matrices(feeder)
    config = _config(args, feeder)
    report = check_d1_condition(config.bundle, mats.X)
    g3 = d3_stepsize_bound(config.bundle, mats.X)
    print(f"feedback modulus sigma            : {report.sigma:.6f}")
    print(f"contraction condition (sigma < 1) : {'holds' if report.sufficient else 'FAILS'}")
    print(f"row-sum sufficient value          : {report.corollary_value:.6f}"
          f" ({'holds' if report.corollary_holds else 'fails'})")
    print(f"uniform-slope stability limit     : {report.uniform_alpha_limit:.4f}")
    print(f"pseudo-gradient stepsize bound    : {g3:.6f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(
                _run_meta(args, feeder, {
                    "sigma": report.sigma,
                    "corollary_value": report.corollary_value,
                    "uniform_alpha_limit": report.uniform_alpha_limit,
                    "gamma3_bound": g3,
                }),
                fh, indent=1, sort_keys=True)
            fh.write("\n")
    return 0 if report.sufficient else 2


def cmd_simulate(args):
    feeder = _load(args)
    mats = sensitivity_matrices(feeder)
    config = _config(args, feeder, kind=args.controller)
    traj = simulate(
        feeder, config, plant=args.plant, tol=args.tol, max_iter=args.max_iter,
        record_every=args.record_every, track_objective=True, mats=mats,
    )
    dev = float(np.abs(traj.final_v - feeder.v_nom).max())
    print(f"verdict: {traj.verdict} after {traj.steps} steps"
          + (f" (converged at t={traj.converged_at})" if traj.converged_at else ""))
    print(f"final max |v - v_nom|: {dev:.6f} p.u.")
    if args.out:
        write_trajectory_csv(traj, args.out + ".csv")
        extra = {
            "controller": args.controller,
            "plant": args.plant,
            "plant_note": "full model is the radial branch-flow sweep"
            if args.plant == "distflow" else "linearized branch flow",
            "gamma2": args.gamma2,
            "gamma3": args.gamma3,
            "record_every": args.record_every,
            "verdict": traj.verdict,
            "steps": traj.steps,
            "converged_at": traj.converged_at,
            "final_max_voltage_deviation": dev,
        }
        with open(args.out + ".json", "w") as fh:
            json.dump(_run_meta(args, feeder, extra), fh, indent=1, sort_keys=True)
            fh.write("\n")
    return 0 if traj.verdict == "converged" else 2


def cmd_equilibrium(args):
    feeder = _load(args)
    mats = sensitivity_matrices(feeder)
    config = _config(args, feeder, kind="d1")  # curves/limits only; solver picks gamma3
    try:
        report = solve_equilibrium(
            feeder, curves=config.curves, q_min=config.q_min, q_max=config.q_max,
            tol=args.tol, mats=mats,
        )
    except MaxIterations as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    dev = float(np.abs(report.v_star - feeder.v_nom).max())
    print(f"objective           : {report.objective:.8e}")
    print(f"  curve cost        : {report.cost_term:.8e}")
    print(f"  quadratic term    : {report.quadratic_term:.8e}")
    print(f"  linear term       : {report.linear_term:.8e}")
    print(f"fixed-point residual: {report.fixed_point_residual:.3e}")
    print(f"max |v* - v_nom|    : {dev:.6f} p.u. ({report.iterations} iterations)")
    if args.out:
        payload = _run_meta(args, feeder, {
            "objective": report.objective,
            "cost_term": report.cost_term,
            "quadratic_term": report.quadratic_term,
            "linear_term": report.linear_term,
            "fixed_point_residual": report.fixed_point_residual,
            "max_voltage_deviation": dev,
            "q_star": [float(x) for x in report.q_star],
            "v_star": [float(x) for x in report.v_star],
        })
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return 0


def _parse_grid(text):
    if ":" in text:
        lo, hi, num = text.split(":")
        return [float(v) for v in np.linspace(float(lo), float(hi), int(num))]
    return [float(v) for v in text.split(",")]


def _sweep_point(payload):
    (feeder_src, knobs, parameter, value, controller, plant, alpha, deadband,
     gamma2, gamma3, tol, max_iter) = payload
    if parameter == "load_scale":
        knobs = dict(knobs, load_scale=value)
    feeder = load_feeder(feeder_src, **knobs)
    mats = sensitivity_matrices(feeder)
    if parameter == "alpha":
        alpha = value
    elif parameter == "gamma2":
        controller, gamma2 = "d2", value
    elif parameter == "gamma3":
        controller, gamma3 = "d3", value
    config = ControllerConfig.from_feeder(
        feeder, controller, alpha=alpha, deadband=deadband, gamma2=gamma2, gamma3=gamma3
    )
    report = check_d1_condition(config.bundle, mats.X)
    eq = solve_equilibrium(
        feeder, curves=config.curves, q_min=config.q_min, q_max=config.q_max, mats=mats
    )
    traj = simulate(feeder, config, plant=plant, tol=tol, max_iter=max_iter, mats=mats,
                    record_every=max_iter)
    dev = float(np.abs(eq.v_star - feeder.v_nom).max())
    return value, dev, traj.verdict, report.sigma


def cmd_sweep(args):
    grid = _parse_grid(args.grid)
    if not grid:
        print("error: empty grid", file=sys.stderr)
        return 1
    knobs = dict(
        power_factor=args.power_factor,
        load_scale=args.load_scale,
        pv_operating_fraction=args.pv_fraction,
        inverter_oversize=args.oversize,
        tan_rho=args.tan_rho,
    )
    payloads = [
        (args.feeder, knobs, args.parameter, v, args.controller, args.plant,
         args.alpha, args.deadband, args.gamma2, args.gamma3, args.tol, args.max_iter)
        for v in grid
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, payloads))
    else:
        rows = [_sweep_point(p) for p in payloads]
    header = f"{args.parameter},eq_max_deviation,verdict,sigma"
    out_lines = [header] + [
        f"{_fmt(v)},{_fmt(dev)},{verdict},{_fmt(sigma)}" for v, dev, verdict, sigma in rows
    ]
    text = "\n".join(out_lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_export_feeder(args):
    feeder = _load(args)
    path = args.out or "feeder.json"
    save_feeder(feeder, path)
    print(f"wrote {path} ({feeder.n} non-slack buses, hash {feeder_hash(feeder)[:12]})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="voltvar",
        description="Volt/VAR control analysis on radial distribution feeders",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="evaluate the convergence conditions")
    _add_common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="run a closed-loop trajectory")
    _add_common(p)
    p.add_argument("--controller", choices=("d1", "d2", "d3"), default="d1")
    p.add_argument("--plant", choices=("linear", "distflow"), default="linear")
    p.add_argument("--gamma2", type=float, default=None)
    p.add_argument("--gamma3", type=float, default=None)
    p.add_argument("--record-every", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("equilibrium", help="solve for the closed-loop equilibrium")
    _add_common(p)
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("sweep", help="equilibrium and verdict over a parameter grid")
    _add_common(p)
    p.add_argument("parameter", choices=("alpha", "gamma2", "gamma3", "load_scale"))
    p.add_argument("--grid", required=True,
                   help="comma list '1,5,10' or range 'lo:hi:n'")
    p.add_argument("--controller", choices=("d1", "d2", "d3"), default="d1")
    p.add_argument("--plant", choices=("linear", "distflow"), default="linear")
    p.add_argument("--gamma2", type=float, default=None)
    p.add_argument("--gamma3", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-feeder", help="write the canonical per-unit JSON")
    _add_common(p)
    p.set_defaults(func=cmd_export_feeder)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # surface a clean one-liner, scriptable exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
