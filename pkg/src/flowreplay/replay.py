"""Experience-guided task execution with full audit logging.

Replay walks the low-level automaton when the environment fingerprint
matches the recording exactly; otherwise (or when the walk can no longer
serve the task) it falls back to the high-level plan, where a planner turns
abstract steps into concrete actions. Every attempted action passes the
integrity monitor first and lands in the audit log; the first deny or
execution error halts the run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .core import (
    MASK_PLACEHOLDER,
    ActionTemplate,
    ActivityInstance,
    FlowReplayError,
    HEURISTIC_SENSITIVE_ROLES,
    key_str,
)
from .monitor import (
    HIGH,
    LOW,
    Verdict,
    advance,
    check,
    high_context,
    low_context,
)
from .summarize import AbstractStep, Edge, Experience
from .world import (
    ElementNotFound,
    EnvState,
    WorldError,
    WorldSpec,
    apply,
    fingerprint,
    initial_state,
    signature_of,
)

SUCCESS = "Success"
DENIED = "Denied"
EXEC_ERROR = "ExecError"
PLANNER_ERROR = "PlannerError"


class PlannerFailure(FlowReplayError):
    """The planner could not produce an action for a step."""


@dataclass(frozen=True)
class TaskRequest:
    task_label: str
    inputs: tuple[tuple[str, str], ...] = ()

    def input_for(self, role: str) -> str | None:
        for k, v in self.inputs:
            if k == role:
                return v
        return None

    @classmethod
    def make(cls, task_label: str, inputs: Mapping[str, str]) -> "TaskRequest":
        return cls(task_label, tuple(inputs.items()))


@dataclass(frozen=True)
class ElementView:
    """What a planner may observe about one on-page element."""

    element_id: str
    role: str
    kind: str
    options: tuple[str, ...] = ()


class Planner(Protocol):
    def plan_step(
        self,
        step: AbstractStep,
        observation: Sequence[ElementView],
        inputs: TaskRequest,
    ) -> ActivityInstance: ...


def _normalize_role(role: str) -> str:
    return role.casefold().replace("_", "").replace(" ", "")


class StubPlanner:
    """Deterministic planner: resolves a step's role to a concrete element by
    exact match, then by normalized match, and fills arguments from the task
    inputs (or the witnessed constant)."""

    def plan_step(
        self,
        step: AbstractStep,
        observation: Sequence[ElementView],
        inputs: TaskRequest,
    ) -> ActivityInstance:
        kind, role = step.key
        if kind == "Navigate":
            return ActivityInstance(
                template=ActionTemplate("Navigate", role), args=(("page", role),)
            )
        element = next((e for e in observation if e.role == role), None)
        if element is None:
            wanted = _normalize_role(role)
            element = next(
                (e for e in observation if _normalize_role(e.role) == wanted), None
            )
        if element is None:
            raise PlannerFailure(f"no element with role {role!r} on this page")
        args = []
        for name, pc in step.param_constraints:
            value = inputs.input_for(role)
            if value is None and pc.kind == "constant" and kind not in ("Type", "Select"):
                value = pc.values[0]
            if value is None:
                raise PlannerFailure(f"task supplies no input for role {role!r}")
            args.append((name, value))
        return ActivityInstance(
            template=ActionTemplate(kind, role, element.element_id), args=tuple(args)
        )


@dataclass(frozen=True)
class AuditRecord:
    """One attempted action: what was proposed, what the monitor said, and
    what the environment did. Deny records carry no execution result."""

    tick: int
    experience_id: str
    level: str
    action: ActivityInstance
    verdict: Verdict
    exec_result: str | None = None
    planner_used: bool = False

    def to_dict(self) -> dict:
        return {
            "tick": self.tick,
            "experience_id": self.experience_id,
            "level": self.level,
            "action": self.action.to_dict(),
            "verdict": self.verdict.to_dict(),
            "exec_result": self.exec_result,
            "planner_used": self.planner_used,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AuditRecord":
        return cls(
            tick=int(d["tick"]),
            experience_id=d["experience_id"],
            level=d["level"],
            action=ActivityInstance.from_dict(d["action"]),
            verdict=Verdict.from_dict(d["verdict"]),
            exec_result=d.get("exec_result"),
            planner_used=bool(d.get("planner_used", False)),
        )


@dataclass
class ReplayResult:
    outcome: str
    final_state: EnvState
    records: list[AuditRecord] = field(default_factory=list)
    experience_id: str = ""
    detail: str = ""


def write_audit(records: Iterable[AuditRecord], path: str | Path) -> None:
    """Append records to a JSONL audit log, flushing per record."""
    path = Path(path)
    with path.open("a", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            fh.flush()


def read_audit(path: str | Path) -> list[AuditRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(AuditRecord.from_dict(json.loads(line)))
    return out


def _masked_action(action: ActivityInstance, sensitive_roles: set[str]) -> ActivityInstance:
    if action.template.element_role.lower() in sensitive_roles and action.args:
        return ActivityInstance(
            template=action.template,
            args=tuple((k, MASK_PLACEHOLDER) for k, _ in action.args),
            origin_span=action.origin_span,
        )
    return action


def _observe(env: EnvState, world: WorldSpec) -> list[ElementView]:
    page = world.page(env.current_page)
    return [
        ElementView(el.element_id, el.role, el.kind, el.options) for el in page.elements
    ]


DATA_KINDS = frozenset({"Type", "Select"})


def _edge_instantiable(edge: Edge, task: TaskRequest) -> bool:
    """Whether this edge can serve the task.

    Data-bearing edges need a task input for their role, and the value must
    satisfy the edge's learned constraint (a branch witnessed with other
    values cannot serve these inputs). Structural edges (clicks, submits,
    navigation) qualify on their own.
    """
    role_input = task.input_for(edge.template.element_role)
    if edge.template.kind in DATA_KINDS and role_input is None:
        return False
    for _name, pc in edge.param_constraints.items():
        value = role_input
        if value is None and pc.kind == "constant":
            value = pc.values[0]
        if value is None or not pc.satisfied_by(value):
            return False
    return True


def _instantiate_edge(edge: Edge, task: TaskRequest) -> ActivityInstance:
    args = []
    for name, pc in sorted(edge.param_constraints.items()):
        value = task.input_for(edge.template.element_role)
        if value is None and pc.kind == "constant":
            value = pc.values[0]
        args.append((name, value or ""))
    return ActivityInstance(template=edge.template, args=tuple(args))


def _step_instantiable(step: AbstractStep, task: TaskRequest) -> bool:
    if step.key[0] in DATA_KINDS:
        return task.input_for(step.key[1]) is not None
    for _name, pc in step.param_constraints:
        if pc.kind != "constant" and task.input_for(step.key[1]) is None:
            return False
    return True


class _Session:
    """Single replay run: owns the environment, audit sink and counters."""

    def __init__(
        self,
        exp: Experience,
        world: WorldSpec,
        on_record: Callable[[AuditRecord], None] | None,
    ):
        self.exp = exp
        self.world = world
        self.on_record = on_record
        self.env = initial_state(world)
        self.records: list[AuditRecord] = []
        self.sensitive = {r.lower() for r in world.sensitive_roles()} | set(
            HEURISTIC_SENSITIVE_ROLES
        )

    def emit(
        self,
        level: str,
        action: ActivityInstance,
        verdict: Verdict,
        exec_result: str | None,
        planner_used: bool,
        tick: int | None = None,
    ) -> None:
        record = AuditRecord(
            tick=self.env.tick if tick is None else tick,
            experience_id=self.exp.experience_id,
            level=level,
            action=_masked_action(action, self.sensitive),
            verdict=verdict,
            exec_result=exec_result,
            planner_used=planner_used,
        )
        self.records.append(record)
        if self.on_record is not None:
            self.on_record(record)

    def result(self, outcome: str, detail: str = "") -> ReplayResult:
        return ReplayResult(
            outcome=outcome,
            final_state=self.env,
            records=self.records,
            experience_id=self.exp.experience_id,
            detail=detail,
        )


def replay(
    task: TaskRequest,
    exp: Experience,
    world: WorldSpec,
    planner: Planner | None = None,
    on_record: Callable[[AuditRecord], None] | None = None,
) -> ReplayResult:
    """Execute a task guided by an experience.

    All failure modes are outcomes, never exceptions: Denied (monitor),
    ExecError (environment), PlannerError (no executable step left). The
    audit log always reflects exactly the attempted actions.
    """
    session = _Session(exp, world, on_record)
    fp = fingerprint(world)
    if fp.role_digest != exp.env_fingerprint.role_digest:
        return session.result(
            DENIED, "experience does not fit this world (role fingerprint mismatch)"
        )

    performed: dict[str, int] = {}
    if fp.digest == exp.env_fingerprint.digest:
        finished = _replay_low(session, task, performed)
        if finished is not None:
            return finished
        # Low-level walk could not serve the task; the high-level plan takes
        # over with the already performed steps marked consumed.

    return _replay_high(session, task, planner or StubPlanner(), performed)


def _replay_low(
    session: _Session, task: TaskRequest, performed: dict[str, int]
) -> ReplayResult | None:
    """Walk the low-level automaton. Returns a final result, or None to fall
    back to the high-level plan (layout drift or inputs the automaton cannot
    route)."""
    exp, world = session.exp, session.world
    ctx = low_context(exp, signature_of(session.env))
    while ctx.current_node not in exp.low.accept_nodes:
        candidates = [
            e for e in exp.low.out_edges(ctx.current_node or "") if _edge_instantiable(e, task)
        ]
        if not candidates:
            return None
        edge = min(candidates, key=lambda e: (e.template.element_role, e.template.kind))
        action = _instantiate_edge(edge, task)
        attempt_tick = session.env.tick
        verdict = check(ctx, action, exp, LOW)
        if not verdict.allowed:
            session.emit(LOW, action, verdict, None, False, attempt_tick)
            return session.result(DENIED, verdict.detail)
        try:
            new_env = apply(session.env, action, world)
        except ElementNotFound as exc:
            session.emit(LOW, action, verdict, type(exc).__name__, False, attempt_tick)
            return None
        except WorldError as exc:
            session.emit(LOW, action, verdict, type(exc).__name__, False, attempt_tick)
            return session.result(EXEC_ERROR, str(exc))
        session.env = new_env
        session.emit(LOW, action, verdict, "ok", False, attempt_tick)
        ctx = advance(ctx, action, exp, LOW, signature_of(new_env))
        performed[key_str(action.template.key)] = (
            performed.get(key_str(action.template.key), 0) + 1
        )
    return session.result(SUCCESS)


def _replay_high(
    session: _Session,
    task: TaskRequest,
    planner: Planner,
    performed: dict[str, int],
) -> ReplayResult:
    exp, world = session.exp, session.world
    consumed = {step.key: performed.get(key_str(step.key), 0) for step in exp.high.steps}
    ctx = high_context(exp, signature_of(session.env), consumed)

    while True:
        unconsumed = [s for s in exp.high.steps if ctx.consumed_count(s.key) == 0]
        if not unconsumed:
            return session.result(SUCCESS)
        fillable = [s for s in unconsumed if _step_instantiable(s, task)]
        if not fillable:
            return session.result(
                PLANNER_ERROR, "no remaining step can be instantiated from the task inputs"
            )
        done = set(ctx.env_signature.completed)
        enabled = [
            s
            for s in fillable
            if all(b in done for b, a in exp.high.order_constraints if a == s.key)
        ]
        # With no order-enabled step left, propose the lowest fillable one
        # anyway: ordering is the monitor's call, not the replayer's.
        step = min(enabled or fillable, key=lambda s: s.step_id)
        try:
            action = planner.plan_step(step, _observe(session.env, world), task)
        except PlannerFailure as exc:
            return session.result(PLANNER_ERROR, str(exc))
        if action.template.key != step.key:
            return session.result(
                PLANNER_ERROR,
                f"planner proposed {action.template.key_text} for step {key_str(step.key)}",
            )
        attempt_tick = session.env.tick
        verdict = check(ctx, action, exp, HIGH)
        if not verdict.allowed:
            session.emit(HIGH, action, verdict, None, True, attempt_tick)
            return session.result(DENIED, verdict.detail)
        try:
            new_env = apply(session.env, action, world)
        except WorldError as exc:
            session.emit(HIGH, action, verdict, type(exc).__name__, True, attempt_tick)
            return session.result(EXEC_ERROR, str(exc))
        session.env = new_env
        session.emit(HIGH, action, verdict, "ok", True, attempt_tick)
        ctx = advance(ctx, action, exp, HIGH, signature_of(new_env))


def report_outcome(result: ReplayResult, store_root: str | Path) -> None:
    """Feed a replay outcome back into the store's success statistics."""
    from . import store

    store.record_outcome(store_root, result.experience_id, result.outcome == SUCCESS)
