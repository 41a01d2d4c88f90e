"""Demonstration recording against the simulated world.

A demonstration is a scripted file of raw user steps. Recording drives the
environment step by step, snapshotting the abstract state before each event,
and emits a masked trace. Recording aborts on the first error: a half
demonstration is never persisted as ground truth.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .core import (
    FlowReplayError,
    StateSignature,
    Trace,
    TraceEvent,
    abstract_trace,
    mask_sensitive,
    params_from,
)
from .world import (
    WorldError,
    WorldSpec,
    apply,
    apply_event,
    fingerprint,
    initial_state,
    signature_of,
)


class RecordingError(FlowReplayError):
    """A demonstration step failed; carries the offending step index."""

    def __init__(self, step_index: int, cause: Exception):
        super().__init__(f"step {step_index}: {cause}")
        self.step_index = step_index
        self.cause = cause


@dataclass(frozen=True)
class DemoStep:
    action_kind: str
    target_element: str | None = None
    params: tuple[tuple[str, str], ...] = ()

    def to_dict(self) -> dict:
        d: dict = {"action_kind": self.action_kind}
        if self.target_element is not None:
            d["target_element"] = self.target_element
        if self.params:
            d["params"] = {k: v for k, v in self.params}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DemoStep":
        return cls(
            action_kind=d["action_kind"],
            target_element=d.get("target_element"),
            params=params_from(d.get("params", {})),
        )


@dataclass(frozen=True)
class DemoScript:
    task_label: str
    steps: tuple[DemoStep, ...]

    def to_dict(self) -> dict:
        return {"task_label": self.task_label, "steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DemoScript":
        return cls(
            task_label=d["task_label"],
            steps=tuple(DemoStep.from_dict(s) for s in d.get("steps", ())),
        )


def load_script(path: str | Path) -> DemoScript:
    return DemoScript.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_script(script: DemoScript, path: str | Path) -> None:
    Path(path).write_text(json.dumps(script.to_dict(), indent=2) + "\n", encoding="utf-8")


def _trace_id(script: DemoScript, world_digest: str) -> str:
    payload = json.dumps(
        {"task": script.task_label, "world": world_digest, "steps": [s.to_dict() for s in script.steps]},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def record(
    script: DemoScript,
    world: WorldSpec,
    sensitive_roles: Iterable[str] = (),
) -> Trace:
    """Execute a demonstration script and return the masked trace.

    Timestamps are 1..n logical ticks. Each event stores the signature of the
    environment immediately before it. Deterministic: the same script and
    world always produce the identical trace.
    """
    if not script.steps:
        raise RecordingError(0, ValueError("script has no steps"))
    env = initial_state(world)
    roles = world.element_roles()
    events: list[TraceEvent] = []
    for i, step in enumerate(script.steps):
        # Keypresses land on the currently focused element.
        target = step.target_element
        if step.action_kind == "keypress" and target is None:
            target = env.focused
        target_role = roles.get(target) if target is not None else None
        snapshot = signature_of(env)
        try:
            env = apply_event(env, step.action_kind, target, dict(step.params), world)
        except (WorldError, FlowReplayError) as exc:
            raise RecordingError(i, exc) from exc
        events.append(
            TraceEvent(
                timestamp=i + 1,
                action_kind=step.action_kind,
                target_element=target,
                params=step.params,
                state_snapshot=snapshot,
                masked=False,
                target_role=target_role,
            )
        )
    trace = Trace(
        trace_id=_trace_id(script, fingerprint(world).digest),
        task_label=script.task_label,
        env_fingerprint=fingerprint(world),
        events=tuple(events),
        final_snapshot=signature_of(env),
    )
    sensitive = set(sensitive_roles) | world.sensitive_roles()
    return mask_sensitive(trace, sensitive, roles)


@dataclass(frozen=True)
class StepOutcome:
    index: int
    template_key: str
    ok: bool
    detail: str = ""


@dataclass(frozen=True)
class Divergence:
    step: int
    expected: StateSignature | None = None
    observed: StateSignature | None = None
    error: str | None = None


@dataclass(frozen=True)
class ReproReport:
    reproducible: bool
    steps: tuple[StepOutcome, ...]
    first_divergence: Divergence | None = None


def verify_reproducible(trace: Trace, world: WorldSpec) -> ReproReport:
    """Re-run the trace's activities from scratch and compare signatures.

    Failures are data, not exceptions: the report carries per-activity
    outcomes and the first divergence, if any.
    """
    activities = abstract_trace(trace)
    env = initial_state(world)
    steps: list[StepOutcome] = []
    for i, act in enumerate(activities):
        expected = trace.events[act.origin_span[0]].state_snapshot
        observed = signature_of(env)
        if observed != expected:
            steps.append(StepOutcome(i, act.template.key_text, False, "signature mismatch"))
            return ReproReport(
                False,
                tuple(steps),
                Divergence(step=i, expected=expected, observed=observed),
            )
        try:
            env = apply(env, act, world)
        except WorldError as exc:
            steps.append(StepOutcome(i, act.template.key_text, False, type(exc).__name__))
            return ReproReport(
                False,
                tuple(steps),
                Divergence(step=i, expected=expected, error=type(exc).__name__),
            )
        steps.append(StepOutcome(i, act.template.key_text, True))
    final = signature_of(env)
    if final != trace.final_snapshot:
        return ReproReport(
            False,
            tuple(steps),
            Divergence(step=len(activities), expected=trace.final_snapshot, observed=final),
        )
    return ReproReport(True, tuple(steps), None)
