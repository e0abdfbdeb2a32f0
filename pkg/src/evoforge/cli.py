"""Command-line interface: run, validate-config, inspect, export."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, compose_config
from .report import format_archive_table, write_json
from .runner import Runner, validate_run_config
from .store import open_store

logger = logging.getLogger(__name__)


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--profile", default="base", help="config profile name or file")
    parser.add_argument(
        "overrides",
        nargs="*",
        metavar="key=value",
        help="dotted config overrides, e.g. problem.name=heilbronn execution.seed=7",
    )


def _load_snapshot(namespace: str, args) -> Optional[dict]:
    if args.backend == "redis":
        store = open_store("redis", args.address, namespace)
        blob = store.get_blob("archive")
        return json.loads(blob) if blob else None
    path = Path(args.dir) / namespace / "archive.json"
    if not path.is_file():
        return None
    return json.loads(path.read_text())


def cmd_run(args) -> int:
    try:
        config = compose_config(args.profile, args.overrides)
        errors = validate_run_config(config)
        if errors:
            for error in errors:
                print(f"config error: {error}", file=sys.stderr)
            return 2
        runner = Runner(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    report = runner.run()
    best = report.get("best")
    print(f"run complete: {report['generations']} generations, "
          f"{report['llm_calls']} LLM calls, namespace {report['namespace']}")
    if best:
        print(f"best program {best['program_id']} (generation {best['generation']}):")
        for name in sorted(best["metrics"]):
            print(f"  {name} = {best['metrics'][name]}")
    else:
        print("no valid elite found")
    print(f"artifacts in {report['report_dir']}")
    return 0


def cmd_validate_config(args) -> int:
    try:
        config = compose_config(args.profile, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    errors = validate_run_config(config)
    if errors:
        for error in errors:
            print(f"config error: {error}", file=sys.stderr)
        return 2
    print(f"config ok (problem={config.get('problem.name')}, "
          f"namespace={config.namespace})")
    return 0


def cmd_inspect(args) -> int:
    snapshot = _load_snapshot(args.namespace, args)
    if snapshot is None:
        print(f"unknown namespace {args.namespace!r}", file=sys.stderr)
        return 2
    print(format_archive_table(snapshot))
    return 0


def cmd_export(args) -> int:
    snapshot = _load_snapshot(args.namespace, args)
    if snapshot is None:
        print(f"unknown namespace {args.namespace!r}", file=sys.stderr)
        return 2
    target = Path(args.path)
    target.parent.mkdir(parents=True, exist_ok=True)
    write_json(target, snapshot)
    cells = sum(len(i.get("cells", {})) for i in snapshot.get("islands", []))
    print(f"exported {cells} elites and {len(snapshot.get('lineage_edges', []))} "
          f"lineage edges to {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoforge",
        description="LLM-guided program evolution with a MAP-Elites archive.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="run an evolutionary search")
    _add_config_arguments(run_parser)
    run_parser.set_defaults(handler=cmd_run)

    validate_parser = commands.add_parser(
        "validate-config", help="compose and validate a configuration without running"
    )
    _add_config_arguments(validate_parser)
    validate_parser.set_defaults(handler=cmd_validate_config)

    for name, handler, needs_path in (
        ("inspect", cmd_inspect, False),
        ("export", cmd_export, True),
    ):
        sub = commands.add_parser(
            name, help=f"{name} a run's archive snapshot by namespace"
        )
        sub.add_argument("namespace")
        if needs_path:
            sub.add_argument("path", help="output JSON file")
        sub.add_argument("--dir", default="runs", help="report directory root")
        sub.add_argument("--backend", default="file", choices=["file", "redis"])
        sub.add_argument("--address", default=None, help="redis host:port")
        sub.set_defaults(handler=handler)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
