"""Command-line entry point: ``glassbox <stage> [flags]``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import ConfigError, load_config
from .ensemble import ModelFormatError
from .meijer import MeijerGError
from .pipeline import STAGES, MissingArtifact, StageFailure, run_pipeline, run_stage, write_manifest
from .table import DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glassbox", description="Train and explain tree-ensemble classifiers.")
    p.add_argument("command", choices=STAGES + ("run",), help="pipeline stage, or 'run' for all of them")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", help="report directory")
    p.add_argument("--seed", type=int, help="run seed used by every section without its own seed")
    p.add_argument("--model", choices=("forest", "leafwise", "depthwise"))
    p.add_argument("--synth", action="store_true", help="use the synthetic cohort generator")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    return p


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    # dedicated flags win over --set and the file
    if args.out is not None:
        out["out"] = args.out
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.model is not None:
        out["model.kind"] = args.model
    if args.synth:
        out["data.source"] = "synth"
        out["data.path"] = ""
        out["data.schema"] = ""
    return out


def _exit_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, MissingArtifact, ModelFormatError, OSError)):
        return EXIT_DATA
    if isinstance(exc, (ArithmeticError, MeijerGError, np.linalg.LinAlgError, ValueError)):
        return EXIT_NUMERIC
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"glassbox: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        try:
            out = run_pipeline(config)
        except StageFailure as exc:
            code = _exit_code(exc.error)
            print(f"glassbox: stage {exc.stage} failed: {exc.error}", file=sys.stderr)
            return code
        print(out / "manifest.json")
        return EXIT_OK
    try:
        written = run_stage(config, args.command)
    except Exception as exc:
        code = _exit_code(exc)
        print(f"glassbox: stage {args.command} failed: {exc}", file=sys.stderr)
        return code
    write_manifest(config, [args.command])
    for name in written:
        print(name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
