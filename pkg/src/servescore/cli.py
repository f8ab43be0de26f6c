"""Command-line entry point.

    servescore all --data-dir data/ --out out/ --seed 7
    servescore fit --config run.cfg --dataset wimbledon-M

A config file holds ``key = value`` lines (``#`` starts a comment). List
values are comma-separated; ``column_map.<field> = <header>`` entries rename
input columns. Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .pipeline import STAGES, ConfigError, PipelineConfig, run

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

_LIST_KEYS = {"datasets", "years"}


def parse_config_file(path) -> dict:
    values: dict = {"column_map": {}}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("column_map."):
            values["column_map"][key.split(".", 1)[1]] = value
        elif key in _LIST_KEYS:
            values[key] = [v.strip() for v in value.split(",") if v.strip()]
        else:
            values[key] = value
    return values


def build_config(args: argparse.Namespace) -> PipelineConfig:
    values = parse_config_file(args.config) if args.config else {"column_map": {}}
    overrides = {
        "data_dir": args.data_dir,
        "output_dir": args.out,
        "seed": args.seed,
        "jobs": args.jobs,
        "datasets": args.dataset,
        "min_serves": args.min_serves,
        "split_fraction": args.split_fraction,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "out" in values:
        values.setdefault("output_dir", values.pop("out"))
    unknown = set(values) - set(PipelineConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("data_dir", "output_dir"):
        if key not in values:
            raise ConfigError(f"{key} is required (flag or config file)")
    try:
        cfg = PipelineConfig(
            data_dir=Path(values["data_dir"]),
            output_dir=Path(values["output_dir"]),
            column_map=dict(values.get("column_map", {})),
            **{k: _coerce(k, values[k]) for k in ("datasets", "years", "seed", "min_serves",
                                                    "split_fraction", "jobs") if k in values},
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def _coerce(key, value):
    if key == "years":
        return [int(v) for v in value]
    if key == "datasets":
        return list(value)
    if key == "split_fraction":
        return float(value)
    return int(value)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="servescore", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", nargs="?", choices=list(STAGES) + ["all", "demo-data"],
                        help="stage to run, 'all', or 'demo-data' to write synthetic input files")
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--data-dir", help="directory with {year}-{slam}-matches/points.csv files")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, help="datasets processed in parallel")
    parser.add_argument("--dataset", action="append",
                        help="wimbledon-M, wimbledon-W, usopen-M or usopen-W (repeatable)")
    parser.add_argument("--min-serves", type=int)
    parser.add_argument("--split-fraction", type=float)
    parser.add_argument("--stage", choices=list(STAGES) + ["all"], help="alternative to the positional command")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.stage or args.command
    if command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG

    if command == "demo-data":
        from .simulate import write_demo_slam_files

        if not args.data_dir:
            print("demo-data needs --data-dir", file=sys.stderr)
            return EXIT_CONFIG
        files = write_demo_slam_files(args.data_dir, seed=args.seed if args.seed is not None else 0)
        print(f"wrote {len(files)} files to {args.data_dir}")
        return EXIT_OK

    try:
        cfg = build_config(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    stages = STAGES if command == "all" else (command,)
    status, manifest, outcomes = run(cfg, stages)
    for o in outcomes:
        state = "ok" if o.ok else f"FAILED at {o.failed_stage}: {o.error}"
        print(f"{o.dataset}: {state}")
    print(f"manifest: {manifest}")
    return EXIT_OK if status == 0 else EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
