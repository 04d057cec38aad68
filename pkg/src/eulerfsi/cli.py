"""Command line entry point: ``eulerfsi run --scenario NAME [options]``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .scenarios import (SCENARIO_FACTORIES, SCENARIOS, ConfigError, load_config, plot_timeseries,
                        run)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

# CLI flag -> RunConfig field
_FLAGS = {"dt": "dt", "t_end": "t_end", "ubar": "ubar", "mu_s": "mu_s", "rho_s": "rho_s",
          "epsilon0": "epsilon0", "fp_tol": "fp_tol", "fp_max_iter": "fp_max_iter",
          "out": "out_dir", "seed": "seed", "stride": "snapshot_stride"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="eulerfsi", description="Monolithic Eulerian fluid-structure solver.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--scenario", choices=SCENARIOS)
    r.add_argument("--config", help="config file; CLI flags override its values")
    r.add_argument("--dt", type=float)
    r.add_argument("--t-end", type=float)
    r.add_argument("--vertices", type=int, help="target vertex count of the mesh")
    r.add_argument("--ubar", type=float, help="mean inflow velocity (m/s)")
    r.add_argument("--mu-s", type=float, help="solid shear modulus (Pa)")
    r.add_argument("--rho-s", type=float, help="solid density (kg/m^3)")
    r.add_argument("--epsilon0", type=float, help="pressure stabilisation factor")
    r.add_argument("--fp-tol", type=float)
    r.add_argument("--fp-max-iter", type=int)
    r.add_argument("--no-energy-stable", action="store_true")
    r.add_argument("--stride", type=int, help="VTK snapshot every N steps")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("-q", "--quiet", action="store_true")
    pl = sub.add_parser("plot", help="regenerate SVG plots from a timeseries.csv")
    pl.add_argument("csv")
    pl.add_argument("--out", default=None)
    return p


def config_from_args(args):
    if args.config:
        base = SCENARIO_FACTORIES[args.scenario]() if args.scenario else None
        cfg = load_config(args.config, base)
    elif args.scenario:
        cfg = SCENARIO_FACTORIES[args.scenario]()
    else:
        raise ConfigError("either --scenario or --config is required")
    values = {field: getattr(args, flag) for flag, field in _FLAGS.items()
              if getattr(args, flag) is not None}
    if args.no_energy_stable:
        values["energy_stable"] = False
    if args.vertices is not None:
        values["geometry"] = dataclasses.replace(cfg.geometry, target_vertex_count=args.vertices)
    try:
        return dataclasses.replace(cfg, **values).validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "plot":
        import os
        try:
            plot_timeseries(args.csv, args.out or os.path.dirname(os.path.abspath(args.csv)))
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    def progress(n, row):
        if not args.quiet:
            print(f"step {n:6d}  t={row['t']:.4f}  tip=({row['tip_x']:.5f}, {row['tip_y']:.5f})"
                  f"  E={row['E_total']:.6g}  fp={row['fp_iterations']}", flush=True)

    try:
        result = run(cfg, progress=progress)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if result.status != 0:
        print(f"solver failure: {result.message}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"done: {result.message}; outputs in {result.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
