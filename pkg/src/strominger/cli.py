"""Command-line entry point: ``strominger {lattice,synthesize,solve,verify}``.

Exit codes: 0 pass, 1 usage or configuration error, 2 residual or
feasibility failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .lattice import LatticeError
from .solver import SolverError

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="strominger", description="Torus-bundle solutions of the anomaly system on a flat base.")
    p.add_argument("-v", "--verbose", action="store_true", help="log Newton progress")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("lattice", "exact lattice report: b2 chain, divisors, labels, integrability table"),
        ("synthesize", "build ansatz and equation data from integer charges"),
        ("solve", "continuity-method solve; writes solution, trace and summary"),
        ("verify", "residuals of all four equations at a stored solution"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=None)
        if name == "verify":
            sp.add_argument("--solution", default=None,
                            help="field stem of u (default <out>/u); 'zero' evaluates u = 0")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = pipeline.load_config(args.config)
        if args.command == "lattice":
            report = pipeline.cmd_lattice(cfg)
            out = args.out if args.out is not None else (Path(cfg.output) if cfg.output else None)
            if out is not None:
                pipeline.write_json(Path(out) / "lattice.json", report)
            else:
                sys.stdout.write(pipeline.json.dumps(report, indent=2, sort_keys=True, default=pipeline._json_default) + "\n")
            return EXIT_OK
        if args.command == "synthesize":
            pipeline.cmd_synthesize(cfg, args.out)
            return EXIT_OK
        if args.command == "solve":
            pipeline.cmd_solve(cfg, args.out)
            return EXIT_OK
        report = pipeline.cmd_verify(cfg, args.out, args.solution)
        if not report["pass"]:
            failed = [k for k, v in report["checks"].items() if v.get("pass") is False]
            print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
            return EXIT_FAIL
        return EXIT_OK
    except pipeline.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LatticeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.IntegrabilityViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
