from __future__ import annotations

import json

import pytest

from flowreplay.cli import main
from flowreplay.replay import read_audit


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["fixtures", "--out-dir", "."]) == 0
    return tmp_path


def run(args):
    return main(args)


def test_golden_flow_exit_codes(workdir, capsys):
    steps = [
        ["record", "--world", "demo_world.json", "--script", "trace_a_script.json", "--out", "a.jsonl"],
        ["record", "--world", "demo_world.json", "--script", "trace_b_script.json", "--out", "b.jsonl"],
        ["summarize", "--traces", "a.jsonl,b.jsonl", "--out", "exp.json", "--world", "demo_world.json"],
        ["verify", "--experience", "exp.json", "--traces", "a.jsonl,b.jsonl", "--max-len", "8"],
        [
            "replay", "--world", "demo_world.json", "--experience", "exp.json",
            "--input", "name=Alice", "--input", "gate=B7", "--input", "date=2025-07-04",
            "--audit", "audit.jsonl",
        ],
    ]
    codes = [run(s) for s in steps]
    assert codes == [0, 0, 0, 0, 0]
    assert (workdir / "audit.jsonl").exists()
    out = capsys.readouterr().out
    assert "Success" in out


def test_denied_replay_exits_one_with_audit(workdir):
    run(["record", "--world", "demo_world.json", "--script", "trace_a_script.json", "--out", "a.jsonl"])
    run(["record", "--world", "demo_world.json", "--script", "trace_b_script.json", "--out", "b.jsonl"])
    run(["summarize", "--traces", "a.jsonl,b.jsonl", "--out", "exp.json"])
    code = run(
        [
            "replay", "--world", "demo_world.json", "--experience", "exp.json",
            "--input", "gate=B7", "--input", "date=2025-07-04",
            "--audit", "denied.jsonl",
        ]
    )
    assert code == 1
    records = read_audit(workdir / "denied.jsonl")
    assert records and records[-1].verdict.failed_check == "DependencyOrder"


def test_unknown_flag_exits_two(workdir):
    assert run(["record", "--bogus-flag", "x"]) == 2


def test_missing_file_exits_two(workdir):
    assert run(["summarize", "--traces", "absent.jsonl", "--out", "exp.json"]) == 2


def test_store_round_trip_via_cli(workdir, capsys):
    run(["record", "--world", "demo_world.json", "--script", "trace_a_script.json", "--out", "a.jsonl"])
    run(["summarize", "--traces", "a.jsonl", "--out", "exp.json"])
    assert run(["store", "add", "exp.json", "--root", "store"]) == 0
    exp_id = capsys.readouterr().out.strip().splitlines()[-1]
    assert run(["store", "list", "--root", "store"]) == 0
    assert exp_id in capsys.readouterr().out
    assert run(["store", "show", exp_id[:8], "--root", "store"]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert shown["experience_id"] == exp_id


def test_audit_show_renders_table(workdir, capsys):
    run(["record", "--world", "demo_world.json", "--script", "trace_a_script.json", "--out", "a.jsonl"])
    run(["summarize", "--traces", "a.jsonl", "--out", "exp.json"])
    run(
        [
            "replay", "--world", "demo_world.json", "--experience", "exp.json",
            "--input", "name=Bob", "--input", "gate=A12", "--input", "date=2025-06-01",
            "--audit", "audit.jsonl",
        ]
    )
    capsys.readouterr()
    assert run(["audit", "show", "audit.jsonl"]) == 0
    out = capsys.readouterr().out
    assert "Type/name" in out and "allow" in out


def test_step_mode_appends_then_records(workdir, capsys):
    step = {"action_kind": "type", "target_element": "fld_name", "params": {"text": "Zed"}}
    code = run(
        [
            "record", "--world", "demo_world.json", "--script", "stepwise.json",
            "--out", "s.jsonl", "--step", json.dumps(step), "--task-label", "fill-form",
        ]
    )
    assert code == 0
    saved = json.loads((workdir / "stepwise.json").read_text())
    assert len(saved["steps"]) == 1
    step2 = {"action_kind": "type", "target_element": "fld_gate", "params": {"text": "C9"}}
    run(
        [
            "record", "--world", "demo_world.json", "--script", "stepwise.json",
            "--out", "s.jsonl", "--step", json.dumps(step2),
        ]
    )
    saved = json.loads((workdir / "stepwise.json").read_text())
    assert len(saved["steps"]) == 2


def test_report_renders_csv_and_figures(workdir, capsys):
    run(["record", "--world", "demo_world.json", "--script", "trace_a_script.json", "--out", "a.jsonl"])
    run(["summarize", "--traces", "a.jsonl", "--out", "exp.json"])
    run(
        [
            "replay", "--world", "demo_world.json", "--experience", "exp.json",
            "--input", "name=Bob", "--input", "gate=A12", "--input", "date=2025-06-01",
            "--audit", "audit.jsonl",
        ]
    )
    code = run(
        ["report", "--audit", "audit.jsonl", "--experience", "exp.json", "--out-dir", "report"]
    )
    assert code == 0
    assert (workdir / "report" / "audit.csv").exists()
    assert (workdir / "report" / "timeline.png").stat().st_size > 0
    assert (workdir / "report" / "automaton.png").stat().st_size > 0
    header = (workdir / "report" / "audit.csv").read_text().splitlines()[0]
    assert header.startswith("tick,level,kind,role")


def test_record_sensitive_flag_masks_values(workdir):
    run(["record", "--world", "demo_world.json", "--script", "trace_a_script.json",
         "--out", "masked.jsonl", "--sensitive", "gate,date"])
    text = (workdir / "masked.jsonl").read_text()
    assert "A12" not in text and "2025-06-01" not in text
    assert "Bob" in text  # name stays visible


def test_wrong_task_label_is_usage_error(workdir):
    run(["record", "--world", "demo_world.json", "--script", "trace_a_script.json", "--out", "a.jsonl"])
    run(["summarize", "--traces", "a.jsonl", "--out", "exp.json"])
    code = run(
        [
            "replay", "--world", "demo_world.json", "--experience", "exp.json",
            "--task-label", "other", "--input", "name=Bob",
        ]
    )
    assert code == 2
