"""Command-line entry point.

Subcommands: record, summarize, verify, replay, store (list/show/add),
audit show, report, fixtures. Machine output goes to files or stdout,
diagnostics to stderr. Exit codes: 0 success, 1 domain failure (deny,
failed verification), 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import store as store_mod
from .core import FlowReplayError, read_trace, write_trace
from .fixtures import export_fixtures
from .record import DemoScript, DemoStep, load_script, record, save_script, verify_reproducible
from .replay import SUCCESS, TaskRequest, read_audit, replay
from .summarize import (
    DEFAULT_ENUM_THRESHOLD,
    load_experience,
    save_experience,
    summarize,
)
from .verify import format_report, verify_experience
from .world import fingerprint, load_world

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _err(msg: str) -> None:
    print(f"flowreplay: {msg}", file=sys.stderr)


def _cmd_record(args: argparse.Namespace) -> int:
    world = load_world(args.world)
    script_path = Path(args.script)
    if args.step:
        # Step-at-a-time mode: append to the script file, then record it.
        step = DemoStep.from_dict(json.loads(args.step))
        if script_path.exists():
            script = load_script(script_path)
        elif args.task_label:
            script = DemoScript(task_label=args.task_label, steps=())
        else:
            _err("--task-label is required when creating a new script with --step")
            return EXIT_USAGE
        script = DemoScript(script.task_label, script.steps + (step,))
        save_script(script, script_path)
    script = load_script(script_path)
    sensitive = set(filter(None, (args.sensitive or "").split(",")))
    trace = record(script, world, sensitive)
    write_trace(trace, args.out)
    print(trace.trace_id)
    return EXIT_OK


def _cmd_summarize(args: argparse.Namespace) -> int:
    traces = [read_trace(p) for p in args.traces.split(",")]
    if args.world:
        world = load_world(args.world)
        for trace in traces:
            report = verify_reproducible(trace, world)
            if not report.reproducible:
                _err(f"trace {trace.trace_id} is not reproducible against {args.world}")
                return EXIT_DOMAIN
        fp = fingerprint(world)
    else:
        fp = traces[0].env_fingerprint
    exp = summarize(traces, fp, enum_threshold=args.enum_threshold)
    save_experience(exp, args.out)
    print(exp.experience_id)
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    exp = load_experience(args.experience)
    traces = [read_trace(p) for p in args.traces.split(",")]
    report = verify_experience(exp, traces, args.max_len)
    print(format_report(report))
    return EXIT_OK if report.passed else EXIT_DOMAIN


def _cmd_replay(args: argparse.Namespace) -> int:
    world = load_world(args.world)
    exp = load_experience(args.experience)
    inputs = {}
    for item in args.input or []:
        role, sep, value = item.partition("=")
        if not sep:
            _err(f"--input expects role=value, got {item!r}")
            return EXIT_USAGE
        inputs[role] = value
    task = TaskRequest.make(args.task_label or exp.task_label, inputs)
    if task.task_label != exp.task_label:
        _err(f"task {task.task_label!r} does not match experience {exp.task_label!r}")
        return EXIT_USAGE

    sink = None
    audit_fh = None
    if args.audit:
        audit_fh = open(args.audit, "a", encoding="utf-8")

        def sink(record):  # noqa: ANN001
            audit_fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            audit_fh.flush()

    try:
        result = replay(task, exp, world, on_record=sink)
    finally:
        if audit_fh is not None:
            audit_fh.close()
    if args.store:
        try:
            store_mod.record_outcome(args.store, exp.experience_id, result.outcome == SUCCESS)
        except store_mod.NotFound:
            _err(f"experience {exp.experience_id} not in store {args.store}; outcome not recorded")
    print(f"{result.outcome}: {result.detail}" if result.detail else result.outcome)
    return EXIT_OK if result.outcome == SUCCESS else EXIT_DOMAIN


def _cmd_store(args: argparse.Namespace) -> int:
    if args.store_cmd == "list":
        index = store_mod.list_experiences(args.root)
        for e in index.entries:
            print(
                f"{e.experience_id}\t{e.task_label}\t"
                f"{e.success_count}/{e.success_count + e.failure_count}\t{e.path}"
            )
        return EXIT_OK
    if args.store_cmd == "show":
        matches = [
            e
            for e in store_mod.list_experiences(args.root).entries
            if e.experience_id.startswith(args.experience_id)
        ]
        if len(matches) != 1:
            _err(f"{len(matches)} experiences match {args.experience_id!r}")
            return EXIT_USAGE
        exp = store_mod.load(args.root, matches[0].experience_id)
        print(json.dumps(exp.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    if args.store_cmd == "add":
        exp = load_experience(args.experience)
        experience_id = store_mod.save(exp, args.root)
        print(experience_id)
        return EXIT_OK
    _err(f"unknown store command {args.store_cmd!r}")
    return EXIT_USAGE


def _cmd_audit(args: argparse.Namespace) -> int:
    records = read_audit(args.path)
    print("tick\tlevel\taction\tverdict\texec\tplanner")
    for r in records:
        verdict = "allow" if r.verdict.allowed else f"deny({r.verdict.failed_check})"
        action = f"{r.action.template.kind}/{r.action.template.element_role}"
        print(
            f"{r.tick}\t{r.level}\t{action}\t{verdict}\t"
            f"{r.exec_result or '-'}\t{r.planner_used}"
        )
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    from .report import render_report

    records = read_audit(args.audit)
    exp = load_experience(args.experience) if args.experience else None
    written = render_report(records, args.out_dir, exp)
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_fixtures(args: argparse.Namespace) -> int:
    for path in export_fixtures(args.out_dir):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowreplay",
        description="Record, summarize, verify and replay agent workflows "
        "under execution flow integrity.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("record", help="record a demonstration script into a trace")
    p.add_argument("--world", required=True)
    p.add_argument("--script", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sensitive", help="comma-separated roles to mask")
    p.add_argument("--step", help="JSON step to append to the script before recording")
    p.add_argument("--task-label", help="task label when --step creates a new script")
    p.set_defaults(func=_cmd_record)

    p = sub.add_parser("summarize", help="generalize traces into an experience")
    p.add_argument("--traces", required=True, help="comma-separated trace files")
    p.add_argument("--out", required=True)
    p.add_argument("--world", help="verify reproducibility against this world first")
    p.add_argument("--enum-threshold", type=int, default=DEFAULT_ENUM_THRESHOLD)
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("verify", help="audit an experience for conservativeness")
    p.add_argument("--experience", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--max-len", type=int, default=8)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("replay", help="execute a task guided by an experience")
    p.add_argument("--world", required=True)
    p.add_argument("--experience", required=True)
    p.add_argument("--input", action="append", metavar="ROLE=VALUE")
    p.add_argument("--audit", help="audit log path (JSONL, appended)")
    p.add_argument("--task-label")
    p.add_argument("--store", help="store root for outcome bookkeeping")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("store", help="inspect the experience store")
    store_sub = p.add_subparsers(dest="store_cmd", required=True)
    ps = store_sub.add_parser("list")
    ps.add_argument("--root", required=True)
    ps = store_sub.add_parser("show")
    ps.add_argument("experience_id")
    ps.add_argument("--root", required=True)
    ps = store_sub.add_parser("add")
    ps.add_argument("experience")
    ps.add_argument("--root", required=True)
    p.set_defaults(func=_cmd_store)

    p = sub.add_parser("audit", help="inspect an audit log")
    audit_sub = p.add_subparsers(dest="audit_cmd", required=True)
    pa = audit_sub.add_parser("show")
    pa.add_argument("path")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("report", help="render figures and CSV from an audit log")
    p.add_argument("--audit", required=True)
    p.add_argument("--experience")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("fixtures", help="export the bundled demo world and scripts")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FlowReplayError as exc:
        _err(str(exc))
        return EXIT_DOMAIN
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        _err(f"invalid JSON: {exc}")
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
