"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import scipy.linalg as la

from . import pipeline, store
from .config import ConfigError, RunConfig, default_config_text, load_config
from .fom import SolverFailure
from .mesh import MeshError
from .pod import PodError
from .rom_online import ReducedSolveError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

log = logging.getLogger("efrrom")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _print_summary(title: str, result) -> None:
    if isinstance(result, dict):
        for k, v in result.items():
            print(f"{title} {k}: {v}")
    elif isinstance(result, list):
        for v in result:
            print(f"{title} {v}")


STAGES = {
    "fom-run": ("run the full-order EFR solver and populate the snapshot store", pipeline.stage_fom),
    "pod": ("build the lifting function and POD bases", pipeline.stage_pod),
    "rom-offline": ("project reduced operators and fit the RBF interpolants", pipeline.stage_rom_offline),
    "rom-online": ("time-step the reduced model", pipeline.stage_rom_online),
    "compare": ("error series, lift error and speedup of ROM against FOM", pipeline.stage_compare),
    "export": ("write mesh and field VTK files", pipeline.stage_export),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="efrrom", description="EFR full-order solver and hybrid POD-Galerkin/RBF reduced model")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, (helptext, _) in STAGES.items():
        sp = sub.add_parser(name, help=helptext, description=helptext)
        sp.add_argument("config", type=Path, help="INI run configuration")
        sp.add_argument("--workdir", type=Path, default=None,
                        help="work directory when the config leaves [paths] workdir empty")
    sub.add_parser("default-config", help="print the default configuration")
    return p


def _context(cfg: RunConfig, cli_workdir: Optional[Path]) -> pipeline.Context:
    wd = store.workdir_from(cfg.workdir or (str(cli_workdir) if cli_workdir else None))
    return pipeline.Context(cfg, wd)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "default-config":
        sys.stdout.write(default_config_text())
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        ctx = _context(cfg, args.workdir)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            result = STAGES[args.command][1](ctx)
    except (ConfigError, MeshError, PodError, pipeline.PrerequisiteError, store.StoreError) as exc:
        print(f"efrrom {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverFailure, ReducedSolveError, la.LinAlgError, FloatingPointError) as exc:
        print(f"efrrom {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _print_summary(args.command, result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
