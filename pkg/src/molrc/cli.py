"""Command-line entry point: ``molrc inspect | run | sweep``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Optional, Sequence

from . import experiment
from .experiment import ConfigError, ExperimentConfig
from .molgraph import StructureError


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    src = parser.add_mutually_exclusive_group()
    src.add_argument("--config", help="key = value config file ([data], [reservoir], [learn], [run] sections)")
    src.add_argument("--preset", choices=experiment.PRESETS, help="shipped config to start from")
    group = parser.add_argument_group("settings (override the config file)")
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.metadata["kind"] == "bool":
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None, help=f.metadata["help"])
        else:
            group.add_argument(flag, dest=f.name, default=None, metavar=f.metadata["kind"].replace("opt", "").upper(), help=f.metadata["help"])


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_file(args.config)
    elif args.preset:
        config = experiment.load_preset(args.preset)
    else:
        config = ExperimentConfig()
    changes = {}
    for f in dataclasses.fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            changes[f.name] = value if isinstance(value, bool) else experiment.coerce_setting(f.name, value)
    return config.replace(**changes)


def _parse_rhos(text: str) -> list[float]:
    try:
        rhos = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not rhos:
        raise argparse.ArgumentTypeError("empty soft-distance list")
    return rhos


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molrc", description="Spiking reservoir computing on a molecular graph.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="graph metrics of a structure")
    p.add_argument("structure")
    p.add_argument("--rho", type=float, help="also build the soft graph at this distance (angstrom)")
    p.add_argument("--keep-water", action="store_true")
    p.add_argument("--out-dir", help="write the adjacency list here")

    p = sub.add_parser("run", help="train and evaluate one configuration over its seeds")
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="run a configuration across soft distances")
    _add_config_flags(p)
    p.add_argument("--rhos", type=_parse_rhos, default=list(experiment.DEFAULT_SWEEP_RHOS),
                   help="comma-separated soft distances (default 6,8,9,10,12,14,16,18,20)")

    p = sub.add_parser("show-config", help="print the resolved config as a file")
    _add_config_flags(p)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "inspect":
            report = experiment.inspect(args.structure, rho=args.rho, keep_water=args.keep_water, out_dir=args.out_dir)
            print(report.text())
            return 0
        config = config_from_args(args)
        if args.command == "show-config":
            config.validate(check_files=False)
            print(config.to_ini(), end="")
        elif args.command == "run":
            report = experiment.run(config)
            print(report.summary())
            print(f"metrics = {report.artifacts['metrics']}")
        else:
            points, csv_path = experiment.sweep_soft_distance(config, args.rhos)
            print(experiment.sweep_csv(points), end="")
            print(f"sweep = {csv_path}")
    except (ConfigError, StructureError, OSError) as exc:
        print(f"molrc: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
