"""Command-line entry point: ``lerayflow run|report|validate``.

Exit codes: 0 success, 2 configuration rejected, 3 solver failure or
missing artifacts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, validate_config
from .mild_solver import SolverError
from .pipelines import ReportError, report, run

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3

log = logging.getLogger("lerayflow")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lerayflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="validate and run an experiment configuration")
    r.add_argument("config", help="path to a JSON configuration")
    r.add_argument("-o", "--output", help="output directory (overrides the config)")
    rep = sub.add_parser("report", help="re-render report CSVs from a run manifest")
    rep.add_argument("manifest", help="manifest.json or its run directory")
    v = sub.add_parser("validate", help="check a configuration without running it")
    v.add_argument("config", help="path to a JSON configuration")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "validate":
            cfg = validate_config(args.config)
            print(f"ok: {cfg.pipeline} (config {cfg.config_hash()[:12]})")
        elif args.command == "run":
            log.info("running %s", args.config)
            manifest = run(args.config, args.output)
            print(json.dumps({"pipeline": manifest["pipeline"],
                              "config_hash": manifest["config_hash"],
                              "summary": manifest["summary"]}, indent=1))
        else:
            for path in report(args.manifest):
                print(path)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, ReportError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
