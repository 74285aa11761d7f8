"""Command-line entry point ``oslc-sl``.

Exit codes: 0 all checks pass, 2 an invariant check failed, 3 solver
error, 4 configuration error. Failures write ``error.txt`` into the
output directory when it can be created.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

from ..fields import ConfigError
from .config import ExperimentConfig
from .runner import COMMANDS, run_experiment

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4

logger = logging.getLogger("oslc_sl")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="oslc-sl",
        description="Semi-Lagrangian transport / conservative solvers and benchmark runner.",
    )
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _error_report(out, kind, exc) -> None:
    if out is None:
        return
    try:
        Path(out).mkdir(parents=True, exist_ok=True)
        text = f"error: {kind}\ntype: {type(exc).__name__}\nmessage: {exc}\n"
        if kind == "solver":
            text += "traceback:\n" + "".join(traceback.format_exception(type(exc), exc, exc.__traceback__))
        (Path(out) / "error.txt").write_text(text)
    except OSError:
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    try:
        cfg = ExperimentConfig.from_file(args.config)
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.out is not None:
            changes["out"] = args.out
        cfg = cfg.replace(**changes)
        out = cfg.out
        report = run_experiment(cfg, args.command)
    except ConfigError as exc:
        print(f"oslc-sl: configuration error: {exc}", file=sys.stderr)
        _error_report(out, "config", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any solver failure maps to one exit code
        print(f"oslc-sl: solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _error_report(out, "solver", exc)
        return EXIT_SOLVER
    sys.stdout.write(report.summary())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
