"""Runtime reference monitor enforcing execution flow integrity.

Every procedural action proposed during replay is checked here before it may
touch the environment. Checks run in a fixed order and the first failure
names the verdict:

  1. ExactTraceBypass   byte-equal match against a trusted raw trace
  2. FlowConformance    the action is an out-edge / an unconsumed step
  3. Precondition       witnessed completed-set of the edge is present
  4. DependencyOrder    every always-before key has been performed
  5. ParamConstraintCheck  arguments satisfy the learned constraints
  6. LoopBound          the action stays within observed loop repetitions

The monitor is pure and never touches the environment itself: callers hand
it the post-action signature when advancing. That keeps the trusted base
small and testable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Mapping

from .core import (
    MASK_PLACEHOLDER,
    ActivityInstance,
    FlowReplayError,
    StateSignature,
    TemplateKey,
    key_str,
)

if TYPE_CHECKING:
    from .summarize import AbstractStep, Edge, Experience

LOW = "Low"
HIGH = "High"

PATTERNS: dict[str, re.Pattern] = {
    "integer": re.compile(r"[+-]?\d+"),
    "iso_date": re.compile(r"\d{4}-\d{2}-\d{2}"),
    "email": re.compile(r"[^@\s]+@[^@\s]+\.[^@\s]+"),
}


class InconsistentContext(FlowReplayError):
    """Monitor context does not belong to the experience being enforced."""


class NotAllowed(FlowReplayError):
    """advance() called for an action the monitor does not allow."""


@dataclass(frozen=True)
class CheckFunction:
    """Serializable description of one guard attached to an edge or step."""

    variant: str
    payload: tuple[tuple[str, object], ...] = ()

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "payload": {k: list(v) if isinstance(v, tuple) else v for k, v in self.payload},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CheckFunction":
        payload = tuple(
            sorted(
                (k, tuple(v) if isinstance(v, list) else v)
                for k, v in d.get("payload", {}).items()
            )
        )
        return cls(variant=d["variant"], payload=payload)


@dataclass(frozen=True)
class ParamConstraint:
    """Learned constraint over one action parameter.

    ``constant``: the single witnessed value, required verbatim.
    ``pattern``: all witnessed values shared one builtin pattern; any value
    matching it is accepted.
    ``enum``: few distinct non-patterned values; membership required.
    ``any``: too diverse to constrain.
    """

    kind: str
    values: tuple[str, ...] = ()
    pattern: str | None = None

    def satisfied_by(self, value: str) -> bool:
        if self.kind == "constant":
            return value == self.values[0]
        if self.kind == "enum":
            return value in self.values
        if self.kind == "pattern":
            pat = PATTERNS.get(self.pattern or "")
            return bool(pat and pat.fullmatch(value))
        return self.kind == "any"

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind in ("constant", "enum"):
            d["values"] = list(self.values)
        if self.pattern is not None:
            d["pattern"] = self.pattern
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParamConstraint":
        return cls(
            kind=d["kind"],
            values=tuple(d.get("values", ())),
            pattern=d.get("pattern"),
        )


def infer_constraint(values: list[str], enum_threshold: int = 3) -> ParamConstraint:
    """Generalize witnessed parameter values, conservatively.

    Single value stays constant. Multiple values that all share one builtin
    pattern widen to that pattern (a replay task may supply fresh values of
    the same shape); otherwise a small set stays an enum and anything more
    diverse falls through to any. Masked observations carry no information,
    so they cannot constrain.
    """
    distinct = sorted(set(values) - {MASK_PLACEHOLDER})
    if not distinct:
        return ParamConstraint("any")
    if len(distinct) == 1:
        return ParamConstraint("constant", values=(distinct[0],))
    for name, pat in PATTERNS.items():
        if all(pat.fullmatch(v) for v in distinct):
            return ParamConstraint("pattern", pattern=name)
    if len(distinct) <= enum_threshold:
        return ParamConstraint("enum", values=tuple(distinct))
    return ParamConstraint("any")


@dataclass(frozen=True)
class LoopState:
    """Loop tracker progress: position inside the body and completed
    consecutive iterations."""

    pos: int = 0
    iters: int = 0


def loop_step(body: tuple[TemplateKey, ...], state: LoopState, key: TemplateKey) -> LoopState:
    """Advance a loop tracker by one action key.

    Counts consecutive traversals of the body; any deviation resets the
    tracker (loops are tandem repeats, so leaving the loop forgives the
    count).
    """
    if key == body[state.pos]:
        pos = state.pos + 1
        if pos == len(body):
            return LoopState(pos=0, iters=state.iters + 1)
        return LoopState(pos=pos, iters=state.iters)
    # Deviation: reset, then the key may still start a fresh body run.
    if key == body[0]:
        if len(body) == 1:
            return LoopState(pos=0, iters=1)
        return LoopState(pos=1, iters=0)
    return LoopState()


@dataclass(frozen=True)
class Verdict:
    allowed: bool
    failed_check: str | None = None
    detail: str = ""
    bypassed: bool = False

    def to_dict(self) -> dict:
        return {
            "allowed": self.allowed,
            "failed_check": self.failed_check,
            "detail": self.detail,
            "bypassed": self.bypassed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Verdict":
        return cls(
            allowed=bool(d["allowed"]),
            failed_check=d.get("failed_check"),
            detail=d.get("detail", ""),
            bypassed=bool(d.get("bypassed", False)),
        )


_ALLOW = Verdict(True)


def _deny(check: str, detail: str) -> Verdict:
    return Verdict(False, failed_check=check, detail=detail)


@dataclass(frozen=True)
class MonitorContext:
    """Value-semantic monitor state for one replay session."""

    level: str
    env_signature: StateSignature
    current_node: str | None = None
    consumed: tuple[tuple[str, int], ...] = ()
    loop_states: tuple[tuple[str, LoopState], ...] = ()
    bypass_cursor: tuple[str, int] | None = None

    def consumed_count(self, key: TemplateKey) -> int:
        text = key_str(key)
        for k, n in self.consumed:
            if k == text:
                return n
        return 0

    def loop_state(self, loop_id: str) -> LoopState:
        for k, st in self.loop_states:
            if k == loop_id:
                return st
        return LoopState()


def low_context(exp: "Experience", env_signature: StateSignature) -> MonitorContext:
    return MonitorContext(
        level=LOW, env_signature=env_signature, current_node=exp.low.start_node
    )


def high_context(
    exp: "Experience",
    env_signature: StateSignature,
    consumed: Mapping[TemplateKey, int] | None = None,
) -> MonitorContext:
    consumed = consumed or {}
    return MonitorContext(
        level=HIGH,
        env_signature=env_signature,
        consumed=tuple(sorted((key_str(k), n) for k, n in consumed.items())),
    )


def _bypass_matches(ctx: MonitorContext, action: ActivityInstance, exp: "Experience") -> bool:
    if ctx.bypass_cursor is None:
        return False
    trace_id, idx = ctx.bypass_cursor
    seq = exp.source_activities.get(trace_id, ())
    if idx >= len(seq):
        return False
    recorded = seq[idx]
    return recorded.template == action.template and recorded.args == action.args


def _find_edge(exp: "Experience", node: str, key: TemplateKey) -> "Edge | None":
    for edge in exp.low.edges:
        if edge.src == node and edge.template.key == key:
            return edge
    return None


def _find_step(exp: "Experience", key: TemplateKey) -> "AbstractStep | None":
    for step in exp.high.steps:
        if step.key == key:
            return step
    return None


def _check_params(
    constraints: Mapping[str, ParamConstraint], action: ActivityInstance
) -> Verdict | None:
    for name, value in action.args:
        pc = constraints.get(name)
        if pc is None:
            return _deny("ParamConstraintCheck", f"param {name!r} was never witnessed")
        if not pc.satisfied_by(value):
            return _deny(
                "ParamConstraintCheck",
                f"param {name}={value!r} violates {pc.kind} constraint",
            )
    for name, pc in constraints.items():
        if pc.kind == "constant" and action.arg(name) is None:
            return _deny("ParamConstraintCheck", f"missing witnessed param {name!r}")
    return None


def _check_order(exp: "Experience", ctx: MonitorContext, key: TemplateKey) -> Verdict | None:
    performed = set(ctx.env_signature.completed)
    for before, after in exp.high.order_constraints:
        if after == key and before not in performed:
            return _deny(
                "DependencyOrder",
                f"{key_str(key)} requires {key_str(before)} first",
            )
    return None


def check(
    ctx: MonitorContext,
    action: ActivityInstance,
    exp: "Experience",
    level: str | None = None,
) -> Verdict:
    """Evaluate the ordered check pipeline for one proposed action."""
    level = level or ctx.level
    key = action.template.key

    if _bypass_matches(ctx, action, exp):
        return Verdict(True, detail="exact trace match", bypassed=True)

    if level == LOW:
        if ctx.current_node is None or ctx.current_node not in exp.low.node_signatures:
            raise InconsistentContext(f"node {ctx.current_node!r} not in experience")
        edge = _find_edge(exp, ctx.current_node, key)
        if edge is None:
            return _deny(
                "FlowConformance",
                f"no out-edge {key_str(key)} at node {ctx.current_node}",
            )
        if not edge.precondition <= ctx.env_signature.completed:
            missing = sorted(key_str(k) for k in edge.precondition - ctx.env_signature.completed)
            return _deny("Precondition", f"missing completed keys {missing}")
        denied = _check_order(exp, ctx, key)
        if denied:
            return denied
        denied = _check_params(edge.param_constraints, action)
        if denied:
            return denied
        for loop in exp.low.loops:
            st = loop_step(loop.body, ctx.loop_state(loop.loop_id), key)
            if st.iters > loop.bound:
                return _deny(
                    "LoopBound",
                    f"loop {loop.loop_id} exceeds bound {loop.bound}",
                )
        return _ALLOW

    if level == HIGH:
        step = _find_step(exp, key)
        if step is None:
            return _deny("FlowConformance", f"no step {key_str(key)} in plan")
        bound = exp.high.loop_bounds.get(step.step_id, 1)
        if ctx.consumed_count(key) >= bound:
            return _deny(
                "FlowConformance",
                f"step {key_str(key)} already consumed {bound} time(s)",
            )
        denied = _check_order(exp, ctx, key)
        if denied:
            return denied
        denied = _check_params(step.constraints, action)
        if denied:
            return denied
        if ctx.consumed_count(key) + 1 > bound:
            return _deny("LoopBound", f"step {key_str(key)} over bound {bound}")
        return _ALLOW

    raise ValueError(f"unknown level {level!r}")


def advance(
    ctx: MonitorContext,
    action: ActivityInstance,
    exp: "Experience",
    level: str | None = None,
    new_signature: StateSignature | None = None,
) -> MonitorContext:
    """Commit an allowed action, returning the successor context.

    Raises NotAllowed when the action would not pass check(); a deny never
    mutates anything.
    """
    level = level or ctx.level
    verdict = check(ctx, action, exp, level)
    if not verdict.allowed:
        raise NotAllowed(f"advance without allow: {verdict.failed_check}: {verdict.detail}")
    sig = new_signature if new_signature is not None else ctx.env_signature
    key = action.template.key

    if verdict.bypassed:
        trace_id, idx = ctx.bypass_cursor  # type: ignore[misc]
        ctx = replace(ctx, bypass_cursor=(trace_id, idx + 1), env_signature=sig)
        # Re-anchor the low-level node when the new signature names one.
        if level == LOW:
            node = node_id_for(exp, sig)
            if node is not None:
                ctx = replace(ctx, current_node=node)
        return ctx

    if level == LOW:
        edge = _find_edge(exp, ctx.current_node or "", key)
        if edge is None:
            raise NotAllowed("no matching edge to advance along")
        loop_states = dict(ctx.loop_states)
        for loop in exp.low.loops:
            loop_states[loop.loop_id] = loop_step(
                loop.body, ctx.loop_state(loop.loop_id), key
            )
        return replace(
            ctx,
            current_node=edge.dst,
            env_signature=sig,
            loop_states=tuple(sorted(loop_states.items())),
        )

    consumed = dict(ctx.consumed)
    text = key_str(key)
    consumed[text] = consumed.get(text, 0) + 1
    return replace(ctx, consumed=tuple(sorted(consumed.items())), env_signature=sig)


def node_id_for(exp: "Experience", sig: StateSignature) -> str | None:
    for node_id, (page, completed) in exp.low.node_signatures.items():
        if page == sig.page and completed == sig.completed:
            return node_id
    return None
