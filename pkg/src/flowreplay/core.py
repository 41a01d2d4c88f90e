"""Core trace types and trace abstraction.

A recorded demonstration is a ``Trace``: a strictly time-ordered sequence of
raw UI events, each carrying the abstract state signature captured just
before the event fired. Raw events are lifted into semantic activities
(``ActivityInstance``) which form the alphabet of every downstream automaton.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

MASK_PLACEHOLDER = "***MASKED***"

# Roles that are masked even when the caller supplies no sensitive set.
HEURISTIC_SENSITIVE_ROLES = frozenset({"password", "secret", "token", "ssn"})

EVENT_KINDS = frozenset(
    {"click", "keypress", "type", "select", "navigate", "submit", "focus"}
)
TEMPLATE_KINDS = frozenset({"Click", "Type", "Select", "Navigate", "Submit"})

# Raw event kinds that map 1:1 onto an activity template kind.
_EVENT_TO_TEMPLATE = {
    "click": "Click",
    "type": "Type",
    "select": "Select",
    "navigate": "Navigate",
    "submit": "Submit",
}

TemplateKey = tuple[str, str]


class FlowReplayError(Exception):
    """Base class for all domain errors raised by this package."""


class MalformedTrace(FlowReplayError):
    """Trace violates a structural invariant (ordering, focus, params)."""


def key_str(key: TemplateKey) -> str:
    return f"{key[0]}/{key[1]}"


def parse_key(text: str) -> TemplateKey:
    kind, _, role = text.partition("/")
    if kind not in TEMPLATE_KINDS or not role:
        raise ValueError(f"not a template key: {text!r}")
    return (kind, role)


@dataclass(frozen=True)
class ActionTemplate:
    """Semantic action shape: what is done (kind) to which role.

    ``element_id`` binds the template to a concrete element and is absent in
    high-level (role only) contexts. The key deliberately excludes it so that
    id-perturbed worlds map onto the same key.
    """

    kind: str
    element_role: str
    element_id: str | None = None

    @property
    def key(self) -> TemplateKey:
        return (self.kind, self.element_role)

    @property
    def key_text(self) -> str:
        return key_str(self.key)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "element_role": self.element_role}
        if self.element_id is not None:
            d["element_id"] = self.element_id
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ActionTemplate":
        return cls(d["kind"], d["element_role"], d.get("element_id"))


@dataclass(frozen=True)
class StateSignature:
    """Abstract state key: page, performed template keys, focused element.

    The completed set uses template keys (kind + role), never parameter
    values, so re-typed values do not fragment states.
    """

    page: str
    completed: frozenset[TemplateKey] = frozenset()
    focused: str | None = None

    def with_key(self, key: TemplateKey) -> "StateSignature":
        return replace(self, completed=self.completed | {key})

    @property
    def node_key(self) -> tuple[str, frozenset[TemplateKey]]:
        """Signature key used for automaton nodes (focus excluded)."""
        return (self.page, self.completed)

    def to_dict(self) -> dict:
        return {
            "page": self.page,
            "completed": sorted(key_str(k) for k in self.completed),
            "focused": self.focused,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StateSignature":
        return cls(
            page=d["page"],
            completed=frozenset(parse_key(k) for k in d.get("completed", ())),
            focused=d.get("focused"),
        )


Params = tuple[tuple[str, str], ...]


def params_from(pairs: Mapping[str, str] | Iterable[tuple[str, str]]) -> Params:
    if isinstance(pairs, Mapping):
        return tuple(pairs.items())
    return tuple((str(k), str(v)) for k, v in pairs)


@dataclass(frozen=True)
class TraceEvent:
    """One raw recorded event with the state captured just before it."""

    timestamp: int
    action_kind: str
    target_element: str | None
    params: Params
    state_snapshot: StateSignature
    masked: bool = False
    target_role: str | None = None

    def param(self, name: str) -> str | None:
        for k, v in self.params:
            if k == name:
                return v
        return None

    @property
    def role(self) -> str:
        """Semantic role of the target, falling back to its identifier."""
        return self.target_role or self.target_element or ""

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "action_kind": self.action_kind,
            "target_element": self.target_element,
            "target_role": self.target_role,
            "params": {k: v for k, v in self.params},
            "state_snapshot": self.state_snapshot.to_dict(),
            "masked": self.masked,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TraceEvent":
        return cls(
            timestamp=int(d["timestamp"]),
            action_kind=d["action_kind"],
            target_element=d.get("target_element"),
            params=params_from(d.get("params", {})),
            state_snapshot=StateSignature.from_dict(d["state_snapshot"]),
            masked=bool(d.get("masked", False)),
            target_role=d.get("target_role"),
        )


@dataclass(frozen=True)
class Fingerprint:
    """World identity: full digest plus an id-insensitive role digest."""

    digest: str
    role_digest: str

    def to_dict(self) -> dict:
        return {"digest": self.digest, "role_digest": self.role_digest}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Fingerprint":
        return cls(d["digest"], d["role_digest"])


@dataclass(frozen=True)
class Trace:
    """Ground truth: the full recorded demonstration of one task instance."""

    trace_id: str
    task_label: str
    env_fingerprint: Fingerprint
    events: tuple[TraceEvent, ...]
    final_snapshot: StateSignature

    def validate(self) -> None:
        if not self.events:
            raise MalformedTrace("trace has no events")
        prev = 0
        for ev in self.events:
            if ev.timestamp <= prev:
                raise MalformedTrace(
                    f"non-monotonic timestamp {ev.timestamp} after {prev}"
                )
            prev = ev.timestamp
            if ev.action_kind not in EVENT_KINDS:
                raise MalformedTrace(f"unknown event kind {ev.action_kind!r}")
            if ev.masked:
                bad = [v for _, v in ev.params if v != MASK_PLACEHOLDER]
                if bad:
                    raise MalformedTrace("masked event carries raw values")
            elif ev.action_kind == "keypress":
                if len(ev.params) != 1 or ev.params[0][0] != "char":
                    raise MalformedTrace("keypress must carry exactly one char param")
                if len(ev.params[0][1]) != 1:
                    raise MalformedTrace("keypress char must be a single character")


@dataclass(frozen=True)
class ActivityInstance:
    """Semantic action abstracted from one or more raw events."""

    template: ActionTemplate
    args: Params = ()
    origin_span: tuple[int, int] = (0, 0)

    def arg(self, name: str) -> str | None:
        for k, v in self.args:
            if k == name:
                return v
        return None

    def to_dict(self) -> dict:
        return {
            "template": self.template.to_dict(),
            "args": {k: v for k, v in self.args},
            "origin_span": list(self.origin_span),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ActivityInstance":
        return cls(
            template=ActionTemplate.from_dict(d["template"]),
            args=params_from(d.get("args", {})),
            origin_span=tuple(d.get("origin_span", (0, 0))),
        )


def abstract_trace(trace: Trace) -> list[ActivityInstance]:
    """Lift raw events into activities.

    Maximal runs of consecutive keypress events on the same focused element
    collapse into a single Type activity whose text is the concatenated
    characters; focus events are absorbed into the span of the activity that
    follows them. All other kinds map 1:1. The spans partition the event
    list: every event belongs to exactly one activity.
    """
    trace.validate()
    events = trace.events
    out: list[ActivityInstance] = []
    i = 0
    pending_focus: int | None = None
    n = len(events)
    while i < n:
        ev = events[i]
        if ev.action_kind == "focus":
            if pending_focus is None:
                pending_focus = i
            i += 1
            continue
        span_start = pending_focus if pending_focus is not None else i
        pending_focus = None
        if ev.action_kind == "keypress":
            if ev.target_element is None:
                raise MalformedTrace(f"keypress without focus at timestamp {ev.timestamp}")
            j = i
            chars: list[str] = []
            any_masked = False
            while (
                j < n
                and events[j].action_kind == "keypress"
                and events[j].target_element == ev.target_element
            ):
                chars.append(events[j].param("char") or "")
                any_masked = any_masked or events[j].masked
                j += 1
            text = MASK_PLACEHOLDER if any_masked else "".join(chars)
            out.append(
                ActivityInstance(
                    template=ActionTemplate("Type", ev.role, ev.target_element),
                    args=(("text", text),),
                    origin_span=(span_start, j),
                )
            )
            i = j
            continue
        kind = _EVENT_TO_TEMPLATE[ev.action_kind]
        if kind == "Navigate":
            page = ev.param("page") or ""
            template = ActionTemplate("Navigate", page)
        else:
            if ev.target_element is None:
                raise MalformedTrace(f"{ev.action_kind} without target at {ev.timestamp}")
            template = ActionTemplate(kind, ev.role, ev.target_element)
        out.append(
            ActivityInstance(template=template, args=ev.params, origin_span=(span_start, i + 1))
        )
        i += 1
    if pending_focus is not None:
        raise MalformedTrace("trace ends with a dangling focus event")
    return out


def mask_sensitive(
    trace: Trace,
    sensitive_roles: Iterable[str] = (),
    element_roles: Mapping[str, str] | None = None,
) -> Trace:
    """Return a copy with params of sensitive-role events replaced.

    An event is sensitive when its target's role is in ``sensitive_roles`` or
    in the built-in heuristic list. ``element_roles`` maps element ids to
    roles for traces whose events lack an explicit role. Idempotent.
    """
    sensitive = {r.lower() for r in sensitive_roles} | set(HEURISTIC_SENSITIVE_ROLES)

    def role_of(ev: TraceEvent) -> str:
        if ev.target_role:
            return ev.target_role
        if element_roles and ev.target_element in element_roles:
            return element_roles[ev.target_element]
        return ev.target_element or ""

    masked_events = []
    changed = False
    for ev in trace.events:
        if ev.params and not ev.masked and role_of(ev).lower() in sensitive:
            masked_events.append(
                replace(
                    ev,
                    masked=True,
                    params=tuple((k, MASK_PLACEHOLDER) for k, _ in ev.params),
                )
            )
            changed = True
        else:
            masked_events.append(ev)
    if not changed:
        return trace
    return replace(trace, events=tuple(masked_events))


# ---------------------------------------------------------------------------
# Trace file format: one JSON header line, then one TraceEvent per line.


def write_trace(trace: Trace, path: str | Path) -> None:
    path = Path(path)
    header = {
        "trace_id": trace.trace_id,
        "task_label": trace.task_label,
        "env_fingerprint": trace.env_fingerprint.to_dict(),
        "final_snapshot": trace.final_snapshot.to_dict(),
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps(ev.to_dict(), sort_keys=True) for ev in trace.events)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path: str | Path) -> Trace:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MalformedTrace(f"empty trace file: {path}")
    header = json.loads(lines[0])
    events = tuple(TraceEvent.from_dict(json.loads(ln)) for ln in lines[1:])
    trace = Trace(
        trace_id=header["trace_id"],
        task_label=header["task_label"],
        env_fingerprint=Fingerprint.from_dict(header["env_fingerprint"]),
        events=events,
        final_snapshot=StateSignature.from_dict(header["final_snapshot"]),
    )
    trace.validate()
    return trace
