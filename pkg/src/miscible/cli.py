"""Command-line entry point.

Exit codes: 0 success, 1 numeric failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .adjoint import solve_adjoint
from .errors import (CompatibilityError, ConfigError, FormatError, InvalidArgumentError,
                     MiscibleError, StagnationError)
from .identities import CSV_HEADER, IDENTITIES_3D, flipped_jacobian, run_identity_suite
from .io import fmt, write_field_csv, write_snapshots
from .optimize import gradient_check, optimize, smooth_directions
from .tensor import eval_velocity_jacobian

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="miscible", description="Miscible displacement: identity checks, "
                     "forward and adjoint solves, gradient checks and source-control optimization.")
    parser.add_argument("--out", help="output directory (overrides out_dir in the config)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    out_here = dict(default=argparse.SUPPRESS, help="output directory")

    p = sub.add_parser("verify", help="property-check the boundary identities of the dispersion tensor")
    p.add_argument("--dim", type=int, choices=(2, 3), required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identity", "--lemma", dest="identity", choices=IDENTITIES_3D,
                   help="run a single identity")
    p.add_argument("--tolerance", type=float, default=1e-12)
    p.add_argument("--out", **out_here)
    # mutation hook for testing the harness itself
    p.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)

    for name, text in (("forward", "run the forward simulation"),
                       ("adjoint", "run forward then adjoint solves"),
                       ("grad-check", "compare adjoint gradient with finite differences"),
                       ("optimize", "optimize the source control")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", **out_here)
        if name == "grad-check":
            p.add_argument("--directions", type=int, default=10)
    return parser


def _out_dir(args, cfg=None) -> Path:
    out = Path(args.out if args.out else (cfg.out_dir if cfg else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_verify(args) -> int:
    if args.samples < 1:
        raise InvalidArgumentError("--samples must be >= 1")
    jac = flipped_jacobian if args.inject_sign_flip else eval_velocity_jacobian
    reports = run_identity_suite(args.dim, args.samples, args.seed, args.tolerance,
                                 identity=args.identity, jacobian=jac)
    text = CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in reports)
    sys.stdout.write(text)
    if args.out:
        (_out_dir(args) / f"verify_dim{args.dim}.csv").write_text(text)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_NUMERIC


def _setup(args):
    cfg = cfgmod.parse_config(args.config)
    grid = cfgmod.make_grid(cfg)
    solver = cfgmod.make_solver(cfg, grid, cfgmod.make_medium(cfg, grid))
    problem, q, h_star = cfgmod.make_problem(cfg, solver)
    return cfg, problem, h_star, _out_dir(args, cfg)


def _write_summary(path, rows):
    path.write_text("".join(f"{k},{v}\n" for k, v in rows))


def cmd_forward(args) -> int:
    cfg, problem, h_star, out = _setup(args)
    h = h_star if h_star is not None else problem.zero_control()
    states = problem.forward(h)
    g = problem.grid
    write_snapshots(out, g, "c", states.c, cfg.snapshot_stride)
    write_snapshots(out, g, "p", states.p, cfg.snapshot_stride)
    mass = [g.integrate(problem.solver.medium.phi * c) for c in states.c]
    lines = ["step,time,mass,c_min,c_max"]
    lines += [f"{n},{fmt(t)},{fmt(m)},{fmt(c.min())},{fmt(c.max())}"
              for n, (t, m, c) in enumerate(zip(states.times, mass, states.c))]
    (out / "forward_summary.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_adjoint(args) -> int:
    cfg, problem, h_star, out = _setup(args)
    h = problem.zero_control()
    J, states = problem.objective(h)
    adj = solve_adjoint(problem.solver, states, problem.spec.c_d, problem.spec.p_d, problem.spec.alpha)
    g = problem.grid
    for name, traj in (("c", states.c), ("p", states.p), ("psi_c", adj.psi_c), ("psi_p", adj.psi_p)):
        write_snapshots(out, g, name, traj, cfg.snapshot_stride)
    _write_summary(out / "adjoint_summary.csv", [("J", fmt(J))])
    return EXIT_OK


def cmd_grad_check(args) -> int:
    if args.directions < 1:
        raise InvalidArgumentError("--directions must be >= 1")
    cfg, problem, _, out = _setup(args)
    dirs = smooth_directions(problem.grid, cfg.n_steps, args.directions, cfg.seed, cfg.T)
    result = gradient_check(problem, problem.zero_control(), dirs, cfg.grad_check_eps)
    table = result.table()
    sys.stdout.write(table)
    (out / "grad_check.csv").write_text(table)
    ok = np.all(np.isfinite(result.mismatch)) and np.all(result.mismatch <= cfg.grad_check_threshold)
    return EXIT_OK if ok else EXIT_NUMERIC


def _write_control(out, grid, h):
    ctrl = out / "control"
    ctrl.mkdir(exist_ok=True)
    for n, field in enumerate(h):
        write_field_csv(ctrl / f"h_{n:04d}.csv", grid, field)


def cmd_optimize(args) -> int:
    cfg, problem, _, out = _setup(args)
    try:
        h, report = optimize(problem, None, cfgmod.make_optimize_options(cfg))
    except StagnationError as exc:
        (out / "report.csv").write_text(exc.report.to_csv())
        _write_control(out, problem.grid, exc.control)
        print(f"miscible: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    (out / "report.csv").write_text(report.to_csv())
    _write_control(out, problem.grid, h)
    J = report.J
    print(f"iterations={report.iterations} J0={fmt(J[0])} J={fmt(J[-1])} "
          f"grad_norm={fmt(report.optimality_residual)} converged={str(report.converged).lower()}")
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "forward": cmd_forward, "adjoint": cmd_adjoint,
            "grad-check": cmd_grad_check, "optimize": cmd_optimize}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("miscible: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CompatibilityError, FormatError, InvalidArgumentError) as exc:
        print(f"miscible: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MiscibleError as exc:
        print(f"miscible: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
