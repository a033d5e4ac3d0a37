"""Command-line interface: run scenarios, validate fixtures, render reports."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .harness import (
    HarnessError,
    load_scenario,
    report_render,
    run,
    validate,
)


def _setup_logging() -> None:
    level = os.environ.get("ENTMESH_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    report = run(scenario, seed=args.seed)
    if args.out:
        paths = report.save(args.out)
        for name, path in sorted(paths.items()):
            print(f"{name}: {path}")
    else:
        sys.stdout.write(report.to_canonical_json())
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    diagnostics = validate(args.files)
    for diag in diagnostics:
        print(diag, file=sys.stderr)
    if diagnostics:
        return 1
    print(f"{len(args.files)} file(s) clean")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    rendered = report_render(args.report, args.format)
    if args.out:
        Path(args.out).write_text(rendered)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(rendered)
    if args.figures:
        from .figures import render_report_figures

        created = render_report_figures(json.loads(Path(args.report).read_text()), args.figures)
        for path in created:
            print(f"figure: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entmesh",
        description="Simulate multihop entanglement distribution with protection switching.",
    )
    parser.add_argument("--version", action="version", version=f"entmesh {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario and emit its report")
    p_run.add_argument("--scenario", required=True, help="scenario JSON file")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", default=None, help="directory for report.json/csv and events.jsonl")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="schema and cross-reference checks")
    p_val.add_argument("files", nargs="+", help="scenario JSON files")
    p_val.set_defaults(func=_cmd_validate)

    p_rep = sub.add_parser("report", help="render a stored report")
    p_rep.add_argument("report", help="report.json produced by run")
    p_rep.add_argument("--format", choices=("json", "csv"), default="json")
    p_rep.add_argument("--out", default=None, help="output file (default stdout)")
    p_rep.add_argument("--figures", default=None, help="also render figures into this directory")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HarnessError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
