"""Command line entry point.

Exit codes:
    0  success, every test report passed
    1  a test report failed (or a rerun did not reproduce the checksums)
    2  configuration error (bad document, override or arguments)
    3  numerical abort
    4  referenced outputs missing
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bohm import NodeProximityError
from .numerics import NumericalError
from .runner import PLOT_KINDS, MissingOutputError, compare, emit_plots, rerun, resolve_spec, run_spec
from .scenarios import ONTOLOGIES, ScenarioError, builtin_names

EXIT_OK, EXIT_TEST_FAILURE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISSING = 0, 1, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ontosim", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON path or built-in name")
    p.add_argument("--ontology", choices=ONTOLOGIES, help="override the document's ontology")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a document key (dotted path; VALUE parsed as JSON)")
    p.add_argument("--frames", type=int, help="approximate number of density frames to keep")
    p.add_argument("--strict", action="store_true", help="treat unknown keys as errors")

    p = sub.add_parser("compare", help="compare run manifests of one scenario")
    p.add_argument("manifests", nargs="+", type=Path)
    p.add_argument("--json", type=Path, help="also write the report as JSON")

    p = sub.add_parser("plots", help="write gnuplot data files from a run")
    p.add_argument("manifest", type=Path)
    p.add_argument("--kind", choices=PLOT_KINDS, action="append", required=True)
    p.add_argument("--out", type=Path, help="destination (default <run>/plots)")

    p = sub.add_parser("rerun", help="re-run from a manifest and check checksums")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", required=True, type=Path)

    sub.add_parser("list", help="list built-in scenarios")
    return parser


def _cmd_run(args) -> int:
    spec = resolve_spec(args.scenario, args.set, args.seed, args.ontology, args.frames, strict=args.strict)
    for w in spec.warnings:
        print(f"warning: {w}", file=sys.stderr)
    manifest = run_spec(spec, args.out)
    for line in manifest.report_lines():
        print(line)
    print(f"manifest: {args.out / 'manifest.json'}")
    return EXIT_OK if manifest.passed else EXIT_TEST_FAILURE


def _cmd_compare(args) -> int:
    report = compare(args.manifests)
    print(report.text())
    if args.json:
        args.json.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK if report.agreement else EXIT_TEST_FAILURE


def _cmd_plots(args) -> int:
    for kind in args.kind:
        for path in emit_plots(args.manifest, kind, args.out):
            print(path)
    return EXIT_OK


def _cmd_rerun(args) -> int:
    manifest, mismatched = rerun(args.manifest, args.out)
    for rel in mismatched:
        print(f"checksum mismatch: {rel}")
    if not mismatched:
        print(f"reproduced {len(manifest.outputs)} output files")
    return EXIT_TEST_FAILURE if mismatched else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            print("\n".join(builtin_names()))
            return EXIT_OK
        return {"run": _cmd_run, "compare": _cmd_compare, "plots": _cmd_plots, "rerun": _cmd_rerun}[args.command](args)
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingOutputError as exc:
        print(f"missing output: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericalError, NodeProximityError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
