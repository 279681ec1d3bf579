"""Command-line front end: run scenarios, emit figure data, validate configs."""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from . import configio
from . import experiments as xp
from . import link as lnk


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="experiment config file (INI)")
    p.add_argument("--setup", choices=sorted(lnk.MEASURED_RATES_20MW),
                   help="built-in configuration when no config file is given")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--duration", type=float, help="acquisition per grid point (s)")
    p.add_argument("--exact", action="store_true",
                   help="expected-value mode instead of sampling")


def _resolve_config(args) -> tuple[lnk.ExperimentConfig, dict]:
    if args.config:
        config, options = configio.load_config(args.config)
    elif args.setup:
        config = lnk.build_config(args.setup)
        options = {"duration_s": config.duration_s, "seed": config.seed, "exact": False}
    else:
        raise SystemExit("either --config or --setup is required")
    if args.seed is not None:
        options["seed"] = args.seed
    if args.duration is not None:
        options["duration_s"] = args.duration
    if args.exact:
        options["exact"] = True
    return config, options


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spdclink",
        description="simulate and evaluate the entangled-pair source, "
                    "frequency-conversion link and tomography pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full grid of a configuration")
    _add_common(p_run)
    p_run.add_argument("--no-errors", action="store_true",
                       help="skip Monte-Carlo error bars")

    p_fig = sub.add_parser("figure", help="emit plot data for one figure")
    _add_common(p_fig)
    p_fig.add_argument("--which", required=True, choices=xp.FIGURE_KINDS)

    p_val = sub.add_parser("validate-config", help="check a config file")
    p_val.add_argument("path")

    sub.add_parser("version", help="print the package version")

    args = parser.parse_args(argv)

    if args.command == "version":
        print(__version__)
        return 0

    if args.command == "validate-config":
        problems = configio.validate_config(args.path)
        if problems:
            for p in problems:
                print(f"error: {p}", file=sys.stderr)
            return 1
        print(f"{args.path}: ok")
        return 0

    config, options = _resolve_config(args)

    if args.command == "run":
        report = xp.run_scenario(config, out_dir=args.out, exact=options["exact"],
                                 seed=options["seed"], duration_s=options["duration_s"],
                                 with_errors=not args.no_errors)
        print(f"wrote {os.path.join(args.out, f'report_{report.config_name}.csv')} "
              f"({len(report.points)} grid points)")
        return 0

    if args.command == "figure":
        report = None
        if args.which in ("fidelity_sbr_grid", "rates"):
            report = xp.run_scenario(config, out_dir=None, exact=options["exact"],
                                     seed=options["seed"],
                                     duration_s=options["duration_s"],
                                     with_errors=False)
        path = xp.emit_figure_data(args.which, args.out, config=config, report=report,
                                   duration_s=options["duration_s"],
                                   seed=options["seed"], exact=options["exact"])
        print(f"wrote {path}")
        return 0

    return 2


if __name__ == "__main__":
    raise SystemExit(main())
