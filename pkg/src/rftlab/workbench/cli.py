"""Command-line interface.

Subcommands: simulate, invert, run, sweep-noise, compare, export.
Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.
"""

import argparse
import sys
from dataclasses import replace

from ..errors import ConfigError, InvalidSpecError, NumericalError, StageError
from ..stress_field import read_map_csv
from .config import load_config
from .export import export_heatmap
from .runner import (
    compare_configs,
    comparison_table,
    invert_observations,
    run_experiment,
    sweep_noise,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _add_common(parser, config_required=True):
    parser.add_argument("--config", required=config_required, help="experiment config file")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="master seed overriding all config seeds")
    parser.add_argument("--grid", help="reconstruction grid, e.g. 37x37")
    parser.add_argument("--mode", choices=["force", "torque"], help="observation mode override")


def _parse_grid(text):
    parts = text.lower().split("x")
    if len(parts) != 2 or parts[0] != parts[1]:
        raise ConfigError(f"--grid expects NxN with equal sides, got {text!r}")
    try:
        return int(parts[0])
    except ValueError:
        raise ConfigError(f"--grid expects integers, got {text!r}") from None


def _load_with_overrides(args):
    config = load_config(args.config)
    if args.out:
        config = replace(config, output_dir=args.out)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.grid:
        config = replace(config, grid_size=_parse_grid(args.grid))
    if args.mode:
        config = replace(config, observation=replace(config.observation, mode=args.mode))
    return config


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rftlab",
        description="Granular terrain stress-map simulation and reconstruction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="forward simulation only (states + observations)")
    _add_common(p)

    p = sub.add_parser("invert", help="fit + reconstruct from an observation file")
    _add_common(p)
    p.add_argument("--obs", required=True, help="observation CSV to invert")

    p = sub.add_parser("run", help="full pipeline: simulate, fit, reconstruct, evaluate")
    _add_common(p)

    p = sub.add_parser("sweep-noise", help="run the config across noise levels and seeds")
    _add_common(p)
    p.add_argument("--levels", help="comma-separated noise levels (defaults from config)")
    p.add_argument("--seeds", help="comma-separated seeds (defaults from config)")

    p = sub.add_parser("compare", help="run several configs and rank by z-axis RMSE")
    p.add_argument("--config", action="append", required=True, help="repeatable config path")
    p.add_argument("--out", help="output root (overrides each config's output_dir)")
    p.add_argument("--seed", type=int, help="master seed for every config")
    p.add_argument("--grid", help="reconstruction grid, e.g. 37x37")
    p.add_argument("--mode", choices=["force", "torque"])

    p = sub.add_parser("export", help="convert a stress-map CSV to CSV/SVG")
    p.add_argument("input", help="stress-map CSV file")
    p.add_argument("--out", required=True, help="output file")
    p.add_argument("--render", choices=["csv", "svg"], default="svg")
    p.add_argument("--component", choices=["z", "x"], default="z")
    return parser


def _dispatch(args):
    if args.command == "simulate":
        config = _load_with_overrides(args)
        art = run_experiment(config, fit=False)
        print(f"simulated {config.trajectory.sample_count} steps -> {art.output_dir}")
    elif args.command == "invert":
        config = _load_with_overrides(args)
        art = invert_observations(config, args.obs)
        print(f"reconstruction written to {art.paths['reconstruction']}")
    elif args.command == "run":
        config = _load_with_overrides(args)
        art = run_experiment(config)
        print(f"run complete -> {art.output_dir}")
        if art.metrics is not None:
            print(art.metrics.table())
    elif args.command == "sweep-noise":
        config = _load_with_overrides(args)
        levels = [float(v) for v in args.levels.split(",")] if args.levels else None
        seeds = [int(v) for v in args.seeds.split(",")] if args.seeds else None
        result = sweep_noise(config, levels=levels, seeds=seeds)
        for agg in result.aggregates:
            print(
                f"level={agg['level']:g} {agg['component']}: "
                f"rmse {agg['rmse_mean']:.6g} +/- {agg['rmse_std']:.3g}"
            )
    elif args.command == "compare":
        configs = {}
        for path in args.config:
            config = load_config(path)
            if args.out:
                name = config.output_dir.rstrip("/").split("/")[-1]
                config = replace(config, output_dir=f"{args.out}/{name}")
            if args.seed is not None:
                config = config.with_seed(args.seed)
            if args.grid:
                config = replace(config, grid_size=_parse_grid(args.grid))
            if args.mode:
                config = replace(config, observation=replace(config.observation, mode=args.mode))
            configs[path] = config
        rows = compare_configs(configs)
        print(comparison_table(rows))
    elif args.command == "export":
        stress_map = read_map_csv(args.input)
        export_heatmap(stress_map, args.out, render=args.render, component=args.component)
        print(f"wrote {args.out}")
    return EXIT_OK


def exit_code_for(exc) -> int:
    """Map an exception to the documented CLI exit code."""
    if isinstance(exc, StageError) and exc.__cause__ is not None:
        return exit_code_for(exc.__cause__)
    if isinstance(exc, (ConfigError, InvalidSpecError)):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, InvalidSpecError, NumericalError, OSError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
