"""Command-line entry points.

run             execute a scenario config; write log/report/evidence
replay          re-run a config and compare against an expected log
verify-evidence audit an exported evidence chain
kill            run with a kill order injected over the config
list-strategies print the available entity scripts

Exit codes for ``run``/``kill``: 0 clean, 2 when a planned all-scope kill
failed to eradicate, 3 on an internal invariant breach.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .adversary import STRATEGY_NAMES
from .repos import verify_export
from .scenario import (
    KillPlan,
    ParseError,
    ScenarioConfig,
    ValidationError,
    parse_config,
    run_scenario,
    validate_config,
    verify_run,
)

try:
    import dataclasses
except ImportError:  # pragma: no cover
    raise


def _load_config(path: str) -> ScenarioConfig:
    try:
        return parse_config(Path(path).read_text(encoding="utf-8"))
    except (ParseError, ValidationError) as err:
        print(f"config error: {err}", file=sys.stderr)
        raise SystemExit(1) from None


def _execute(config: ScenarioConfig, args: argparse.Namespace) -> int:
    result = run_scenario(config)
    if args.log:
        Path(args.log).write_text(result.log_text, encoding="utf-8")
    if args.report:
        Path(args.report).write_text(json.dumps(result.report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.evidence:
        Path(args.evidence).write_text(result.evidence.export(), encoding="utf-8")
    print(json.dumps(result.report.to_dict(), indent=2, sort_keys=True))
    return result.exit_code


def _cmd_run(args: argparse.Namespace) -> int:
    return _execute(_load_config(args.config), args)


def _cmd_kill(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    scope = () if args.scope == "all" else tuple(args.scope.split(","))
    plan = KillPlan(tick=args.at, scope=scope, channel=args.channel)
    try:
        config = validate_config(dataclasses.replace(config, kill_plan=plan))
    except ValidationError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    return _execute(config, args)


def _cmd_replay(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    expected = Path(args.expect).read_text(encoding="utf-8")
    result = run_scenario(config)
    diff = verify_run(expected, result.log_text)
    print(str(diff))
    return 0 if diff.identical else 1


def _cmd_verify_evidence(args: argparse.Namespace) -> int:
    check = verify_export(Path(args.log).read_text(encoding="utf-8"))
    print(str(check))
    return 0 if check.intact else 1


def _cmd_list_strategies(_args: argparse.Namespace) -> int:
    for name in STRATEGY_NAMES:
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asisim", description="Scenario runner for the guarded-fleet simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario config")
    run.add_argument("config")
    run.add_argument("--log", help="write the canonical event log here")
    run.add_argument("--report", help="write the run report (JSON) here")
    run.add_argument("--evidence", help="write the evidence chain export here")
    run.set_defaults(func=_cmd_run)

    replay = sub.add_parser("replay", help="re-run a config and compare logs")
    replay.add_argument("config")
    replay.add_argument("--expect", required=True, help="previously written canonical log")
    replay.set_defaults(func=_cmd_replay)

    verify = sub.add_parser("verify-evidence", help="audit an exported evidence chain")
    verify.add_argument("log")
    verify.set_defaults(func=_cmd_verify_evidence)

    kill = sub.add_parser("kill", help="run with an injected kill order")
    kill.add_argument("config")
    kill.add_argument("--at", type=int, required=True)
    kill.add_argument("--scope", default="all", help='"all" or comma-separated entity ids')
    kill.add_argument("--channel", default="broadcast", choices=("broadcast", "internet"))
    kill.add_argument("--log")
    kill.add_argument("--report")
    kill.add_argument("--evidence")
    kill.set_defaults(func=_cmd_kill)

    sub.add_parser("list-strategies", help="print available strategies").set_defaults(func=_cmd_list_strategies)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
