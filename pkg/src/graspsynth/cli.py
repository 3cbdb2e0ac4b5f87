"""Command-line front end.

Exit codes: 0 success, 1 validation or per-item failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import pipeline as pl
from .config import ConfigError, RunConfig, desk_config
from .dataset import io
from .dataset.io import FormatError

log = logging.getLogger("graspsynth")

EXIT_OK, EXIT_INVALID, EXIT_CONFIG = 0, 1, 2



def _gen_grasps(cfg, out):
    if not (out / "objects" / "library.json").exists():
        pl.run_library(cfg, out)
    return pl.run_grasps(cfg, out)


STAGES = {
    "gen-grasps": _gen_grasps,
    "compose": pl.run_compose,
    "render": pl.run_render,
    "label": pl.run_label,
    "encode": pl.run_encode,
    "stats": pl.run_stats,
    "export-viz": pl.run_viz,
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--desk", action="store_true", help="start from the small desk-scale settings")
    p.add_argument("--objects", help="number of built-in objects, or a library manifest path")
    p.add_argument("--scenes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", type=Path, default=Path("dataset"))
    p.add_argument("--gripper-width", type=float, dest="gripper_width")
    p.add_argument("--friction", type=float)
    p.add_argument("--radius", type=float, help="label broadcast radius in meters")
    p.add_argument("--no-noise", action="store_true", dest="no_noise")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graspsynth", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"graspsynth {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("pipeline", "run every stage and write the manifest"),
                        ("gen-grasps", "sample single-object grasps"),
                        ("compose", "compose bin scenes"),
                        ("render", "render depth and extract point clouds"),
                        ("label", "filter scene grasps and label clouds"),
                        ("encode", "encode bin/residual targets"),
                        ("stats", "dataset statistics"),
                        ("export-viz", "colored PLY visualizations"),
                        ("validate", "re-check every invariant of a dataset")]:
        _common(sub.add_parser(name, help=help_))
    return parser


def resolve_config(args) -> RunConfig:
    """Config file (or the dataset's own config.json), then flag overrides."""
    if args.config is not None:
        cfg = RunConfig.load(args.config)
    elif args.command != "pipeline" and (args.out / "config.json").exists():
        cfg = RunConfig.load(args.out / "config.json")
    elif args.desk:
        cfg = desk_config()
    else:
        cfg = RunConfig()
    if args.objects is not None:
        if args.objects.isdigit():
            cfg.objects = int(args.objects)
        else:
            cfg.library = args.objects
    for flag in ("scenes", "seed", "jobs"):
        if getattr(args, flag) is not None:
            setattr(cfg, flag, getattr(args, flag))
    if args.gripper_width is not None:
        cfg.gripper = {**cfg.gripper, "max_width": args.gripper_width}
    if args.friction is not None:
        cfg.sampler = replace(cfg.sampler, friction=args.friction)
    if args.radius is not None:
        cfg.labeling = replace(cfg.labeling, radius=args.radius)
    if args.no_noise:
        cfg.camera = replace(cfg.camera, noise_sigma=0.0, dropout=0.0)
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    if args.command == "validate":
        if not (out / "manifest.json").exists():
            print(f"error: {out} has no manifest.json", file=sys.stderr)
            return EXIT_CONFIG
        violations = pl.validate_dataset(out)
        for where, msg in violations:
            print(f"{where}: {msg}", file=sys.stderr)
        print(f"{len(violations)} violation(s)", file=sys.stderr)
        return EXIT_INVALID if len(violations) else EXIT_OK
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "pipeline":
            pl.run_pipeline(cfg, out)
        else:
            out.mkdir(parents=True, exist_ok=True)
            if not (out / "config.json").exists():
                io.write_json(out / "config.json", {"kind": "config", **cfg.snapshot()})
            result = STAGES[args.command](cfg, out)
            if args.command == "stats":
                print((out / "stats.txt").read_text(), end="", file=sys.stderr)
                log.info(json.dumps(result["width_histogram"]))
            if (out / "manifest.json").exists() or args.command == "export-viz":
                pl.write_dataset_manifest(cfg, out)
    except (pl.StageError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, pl.ItemFailures) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
