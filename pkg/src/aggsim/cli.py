"""Command-line interface.

Subcommands:

* ``run <config>``          -- one flow (first n, trial 0 of the config),
                               diagnostics streamed as CSV to stdout
* ``sweep <config>``        -- full experiment, tables written to the
                               output directory
* ``check-kernel <name> [K=V ...]`` -- certify a kernel, JSON to stdout
* ``theory-check <snapshot> --kernel <name> [K=V ...]`` -- run the
                               structural checks on a saved configuration
* ``regress <radii.csv>``   -- radius^2-vs-n least squares on a sweep table

Exit codes: 0 success, 1 usage error, 2 numeric failure (divergence,
degenerate regression, or a failed theory check).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__
from .diagnostics import DiagnosticsWriter
from .dynamics import state_from_csv, state_from_json
from .errors import AggsimError
from .harness import (ExperimentSpec, generate_initial, load_config,
                      read_radii_csv, regress_radius_squared, run_experiment,
                      summary_json, trial_rng)
from .integrators import run_to_steady
from .potentials import ProbeGrid, certify, kernel_from_config
from .theory import theory_report, with_k1


def _parse_params(pairs):
    params = {}
    for item in pairs:
        if "=" not in item:
            raise ValueError(f"expected KEY=VALUE, got {item!r}")
        key, _, val = item.partition("=")
        params[key] = float(val)
    return params


def _apply_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    import dataclasses
    if args.seed is not None:
        spec = dataclasses.replace(spec, init=dataclasses.replace(spec.init, seed=args.seed))
    if args.out is not None:
        spec = dataclasses.replace(spec, outputs=args.out)
    if args.deterministic:
        spec = dataclasses.replace(spec, deterministic=True)
    if args.threads is not None:
        spec = dataclasses.replace(spec, threads=args.threads)
    return spec


def _cmd_run(args) -> int:
    spec = _apply_overrides(load_config(args.config), args)
    kernel = spec.kernel()
    if args.snapshot is not None:
        path = Path(args.snapshot)
        if path.suffix == ".json":
            state, _ = state_from_json(path.read_text())
        else:
            state = state_from_csv(path)
    else:
        n = spec.n_values[0]
        state = generate_initial(n, spec.init, trial_rng(spec.init.seed, n, 0),
                                 kernel=kernel, dim=spec.dim)
    writer = DiagnosticsWriter(sys.stdout)
    outcome = run_to_steady(state, kernel, spec.stepper, writer=writer)
    writer.close()
    print(f"converged={str(outcome.converged).lower()} steps={outcome.steps} "
          f"radius={outcome.history[-1].radius:.17g}", file=sys.stderr)
    return 0


def _cmd_sweep(args) -> int:
    spec = _apply_overrides(load_config(args.config), args)
    result = run_experiment(spec)
    for n, stats in result.per_n.items():
        mean = stats.get("mean_radius")
        mean_txt = "n/a" if mean is None else f"{mean:.6g}"
        print(f"n={n}: mean_radius={mean_txt} "
              f"converged={stats['converged']}/{stats['trials']}")
    if result.regression is not None:
        reg = result.regression
        print(f"regression: slope={reg.slope:.6g} intercept={reg.intercept:.6g} "
              f"r_squared={reg.r_squared:.6g}")
    return 0


def _cmd_check_kernel(args) -> int:
    kernel = kernel_from_config(args.name, _parse_params(args.params))
    probe = None
    if args.r_max is not None:
        probe = ProbeGrid.default_for(kernel, r_max=args.r_max)
    report = with_k1(kernel, certify(kernel, probe=probe, dim=args.dim))
    text = json.dumps(report.to_json(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _cmd_theory_check(args) -> int:
    path = Path(args.snapshot)
    kernel_name = args.kernel
    if path.suffix == ".json":
        state, embedded = state_from_json(path.read_text())
        kernel_name = kernel_name or embedded
    else:
        state = state_from_csv(path)
    if kernel_name is None:
        raise ValueError("snapshot does not name a kernel; pass --kernel")
    kernel = kernel_from_config(kernel_name, _parse_params(args.params))
    report = with_k1(kernel, certify(kernel, dim=state.dim))
    doc = theory_report(state, kernel, report, n_directions=args.directions)
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0 if doc["all_pass"] else 2


def _cmd_regress(args) -> int:
    trials = read_radii_csv(args.table)
    slope, intercept, r2 = regress_radius_squared(
        (t.n, t.radius) for t in trials
        if t.error is None and math.isfinite(t.radius))
    print(json.dumps({"slope": slope, "intercept": intercept, "r_squared": r2}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aggsim",
        description="Particle-flow experiments for repulsive-attractive kernels")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override master seed")
    common.add_argument("--out", default=None, help="override output directory")
    common.add_argument("--deterministic", action="store_true",
                        help="zero out wall-clock columns for byte-identical outputs")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for sweep trials")

    p_run = sub.add_parser("run", parents=[common],
                           help="single flow, diagnostics CSV on stdout")
    p_run.add_argument("config")
    p_run.add_argument("--snapshot", default=None,
                       help="start from a saved state instead of random init")
    p_run.set_defaults(fn=_cmd_run)

    p_sweep = sub.add_parser("sweep", parents=[common], help="full experiment")
    p_sweep.add_argument("config")
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_check = sub.add_parser("check-kernel", help="certify a kernel, print JSON")
    p_check.add_argument("name")
    p_check.add_argument("params", nargs="*", metavar="KEY=VALUE")
    p_check.add_argument("--dim", type=int, default=2)
    p_check.add_argument("--r-max", type=float, default=None, dest="r_max",
                         help="probe tail reach (default 1000x kernel scale)")
    p_check.add_argument("--out", default=None)
    p_check.set_defaults(fn=_cmd_check_kernel)

    p_theory = sub.add_parser("theory-check",
                              help="structural checks on a snapshot")
    p_theory.add_argument("snapshot")
    p_theory.add_argument("--kernel", default=None)
    p_theory.add_argument("params", nargs="*", metavar="KEY=VALUE")
    p_theory.add_argument("--directions", type=int, default=64)
    p_theory.add_argument("--out", default=None)
    p_theory.set_defaults(fn=_cmd_theory_check)

    p_reg = sub.add_parser("regress", help="radius^2-vs-n least squares")
    p_reg.add_argument("table", help="radii.csv from a sweep")
    p_reg.set_defaults(fn=_cmd_regress)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; the contract wants 1
        return 0 if exc.code in (None, 0) else 1
    try:
        return args.fn(args)
    except AggsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
