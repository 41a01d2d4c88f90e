"""Trace generalization into two-level experiences.

One or more traces of the same task become an ``Experience``:

* a low-level automaton whose nodes are abstract state keys
  (page + completed template keys) and whose edges are the witnessed
  procedural actions, and
* a high-level partially ordered plan of role-bound steps.

Generalization is deliberately conservative: every edge must be witnessed by
a source trace, loops are capped at the longest observed repetition, and the
ordering relation is the intersection of precedences over all traces. No
structure is invented.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .core import (
    ActionTemplate,
    ActivityInstance,
    FlowReplayError,
    Fingerprint,
    TemplateKey,
    Trace,
    abstract_trace,
    key_str,
    parse_key,
)
from .monitor import CheckFunction, LoopState, ParamConstraint, infer_constraint, loop_step

DEFAULT_ENUM_THRESHOLD = 3
ENUMERATION_LIMIT = 1_000_000


class SummaryError(FlowReplayError):
    pass


class MixedTask(SummaryError):
    pass


class IncompatibleWorlds(SummaryError):
    pass


class UnreproducibleTrace(SummaryError):
    pass


class StructureDivergence(SummaryError):
    """Traces disagree on page structure; merging them would invent flow."""


class ExplosionGuard(SummaryError):
    """Language enumeration exceeded the safety limit."""


NodeKey = tuple[str, frozenset[TemplateKey]]


def node_id(page: str, completed: frozenset[TemplateKey]) -> str:
    return f"{page}#" + "+".join(sorted(key_str(k) for k in completed))


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    template: ActionTemplate
    precondition: frozenset[TemplateKey] = frozenset()
    param_constraints: dict[str, ParamConstraint] = field(default_factory=dict)
    checks: tuple[CheckFunction, ...] = ()

    def to_dict(self) -> dict:
        return {
            "src": self.src,
            "dst": self.dst,
            "template": self.template.to_dict(),
            "precondition": sorted(key_str(k) for k in self.precondition),
            "param_constraints": {k: v.to_dict() for k, v in self.param_constraints.items()},
            "checks": [c.to_dict() for c in self.checks],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Edge":
        return cls(
            src=d["src"],
            dst=d["dst"],
            template=ActionTemplate.from_dict(d["template"]),
            precondition=frozenset(parse_key(k) for k in d.get("precondition", ())),
            param_constraints={
                k: ParamConstraint.from_dict(v)
                for k, v in d.get("param_constraints", {}).items()
            },
            checks=tuple(CheckFunction.from_dict(c) for c in d.get("checks", ())),
        )


@dataclass(frozen=True)
class LoopSpec:
    loop_id: str
    body: tuple[TemplateKey, ...]
    bound: int

    def to_dict(self) -> dict:
        return {
            "loop_id": self.loop_id,
            "body": [key_str(k) for k in self.body],
            "bound": self.bound,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LoopSpec":
        return cls(
            loop_id=d["loop_id"],
            body=tuple(parse_key(k) for k in d["body"]),
            bound=int(d["bound"]),
        )


@dataclass
class LowLevelExperience:
    node_signatures: dict[str, NodeKey]
    edges: tuple[Edge, ...]
    start_node: str
    accept_nodes: frozenset[str]
    loops: tuple[LoopSpec, ...] = ()
    source_trace_ids: tuple[str, ...] = ()

    def out_edges(self, node: str) -> list[Edge]:
        return [e for e in self.edges if e.src == node]

    def to_dict(self) -> dict:
        return {
            "nodes": {
                nid: {"page": page, "completed": sorted(key_str(k) for k in completed)}
                for nid, (page, completed) in sorted(self.node_signatures.items())
            },
            "edges": [e.to_dict() for e in self.edges],
            "start_node": self.start_node,
            "accept_nodes": sorted(self.accept_nodes),
            "loops": [l.to_dict() for l in self.loops],
            "source_trace_ids": list(self.source_trace_ids),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LowLevelExperience":
        return cls(
            node_signatures={
                nid: (nd["page"], frozenset(parse_key(k) for k in nd["completed"]))
                for nid, nd in d["nodes"].items()
            },
            edges=tuple(Edge.from_dict(e) for e in d["edges"]),
            start_node=d["start_node"],
            accept_nodes=frozenset(d["accept_nodes"]),
            loops=tuple(LoopSpec.from_dict(l) for l in d.get("loops", ())),
            source_trace_ids=tuple(d.get("source_trace_ids", ())),
        )


@dataclass(frozen=True)
class AbstractStep:
    step_id: int
    description: str
    key: TemplateKey
    param_constraints: tuple[tuple[str, ParamConstraint], ...] = ()
    checks: tuple[CheckFunction, ...] = ()

    @property
    def constraints(self) -> dict[str, ParamConstraint]:
        return dict(self.param_constraints)

    def to_dict(self) -> dict:
        return {
            "step_id": self.step_id,
            "description": self.description,
            "template_key": key_str(self.key),
            "param_constraints": {k: v.to_dict() for k, v in self.param_constraints},
            "checks": [c.to_dict() for c in self.checks],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AbstractStep":
        return cls(
            step_id=int(d["step_id"]),
            description=d["description"],
            key=parse_key(d["template_key"]),
            param_constraints=tuple(
                sorted(
                    (k, ParamConstraint.from_dict(v))
                    for k, v in d.get("param_constraints", {}).items()
                )
            ),
            checks=tuple(CheckFunction.from_dict(c) for c in d.get("checks", ())),
        )


@dataclass
class HighLevelExperience:
    steps: tuple[AbstractStep, ...]
    order_constraints: frozenset[tuple[TemplateKey, TemplateKey]]
    loop_bounds: dict[int, int] = field(default_factory=dict)

    def step_for(self, key: TemplateKey) -> AbstractStep | None:
        for s in self.steps:
            if s.key == key:
                return s
        return None

    def to_dict(self) -> dict:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "order_constraints": sorted(
                [key_str(b), key_str(a)] for b, a in self.order_constraints
            ),
            "loop_bounds": {str(k): v for k, v in sorted(self.loop_bounds.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "HighLevelExperience":
        return cls(
            steps=tuple(AbstractStep.from_dict(s) for s in d["steps"]),
            order_constraints=frozenset(
                (parse_key(b), parse_key(a)) for b, a in d.get("order_constraints", ())
            ),
            loop_bounds={int(k): int(v) for k, v in d.get("loop_bounds", {}).items()},
        )


@dataclass
class ExperienceMetadata:
    created_at: int
    source_trace_ids: tuple[str, ...]
    success_count: int = 0
    failure_count: int = 0

    def to_dict(self) -> dict:
        return {
            "created_at": self.created_at,
            "source_trace_ids": list(self.source_trace_ids),
            "success_count": self.success_count,
            "failure_count": self.failure_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperienceMetadata":
        return cls(
            created_at=int(d["created_at"]),
            source_trace_ids=tuple(d.get("source_trace_ids", ())),
            success_count=int(d.get("success_count", 0)),
            failure_count=int(d.get("failure_count", 0)),
        )


@dataclass
class Experience:
    experience_id: str
    task_label: str
    env_fingerprint: Fingerprint
    low: LowLevelExperience
    high: HighLevelExperience
    metadata: ExperienceMetadata
    source_activities: dict[str, tuple[ActivityInstance, ...]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experience_id": self.experience_id,
            "task_label": self.task_label,
            "env_fingerprint": self.env_fingerprint.to_dict(),
            "low": self.low.to_dict(),
            "high": self.high.to_dict(),
            "metadata": self.metadata.to_dict(),
            "source_activities": {
                tid: [a.to_dict() for a in acts]
                for tid, acts in sorted(self.source_activities.items())
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Experience":
        return cls(
            experience_id=d["experience_id"],
            task_label=d["task_label"],
            env_fingerprint=Fingerprint.from_dict(d["env_fingerprint"]),
            low=LowLevelExperience.from_dict(d["low"]),
            high=HighLevelExperience.from_dict(d["high"]),
            metadata=ExperienceMetadata.from_dict(d["metadata"]),
            source_activities={
                tid: tuple(ActivityInstance.from_dict(a) for a in acts)
                for tid, acts in d.get("source_activities", {}).items()
            },
        )


def save_experience(exp: Experience, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(exp.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_experience(path: str | Path) -> Experience:
    return Experience.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Loop folding.


@dataclass(frozen=True)
class LoopFold:
    """A folded tandem repeat: all witnessed iterations of one body."""

    iterations: tuple[tuple[ActivityInstance, ...], ...]

    @property
    def body_keys(self) -> tuple[TemplateKey, ...]:
        return tuple(a.template.key for a in self.iterations[0])

    @property
    def count(self) -> int:
        return len(self.iterations)


FoldedItem = ActivityInstance | LoopFold


def fold_loops(
    activities: Sequence[ActivityInstance],
) -> tuple[list[FoldedItem], dict[tuple[TemplateKey, ...], int]]:
    """Fold maximal tandem repeats of template-key subsequences.

    A repeat needs body length >= 1 and at least two repetitions. Scanning is
    left to right, so the leftmost repeat wins; at equal start the largest
    covered span wins, and a span tie prefers the shortest (primitive) body.
    Returns the folded sequence and the observed repetition count per body.
    """
    keys = [a.template.key for a in activities]
    out: list[FoldedItem] = []
    counts: dict[tuple[TemplateKey, ...], int] = {}
    i = 0
    n = len(keys)
    while i < n:
        best: tuple[int, int] | None = None  # (body_len, reps)
        for body_len in range(1, (n - i) // 2 + 1):
            reps = 1
            while keys[i + reps * body_len : i + (reps + 1) * body_len] == keys[i : i + body_len]:
                reps += 1
            if reps >= 2:
                if best is None or body_len * reps > best[0] * best[1]:
                    best = (body_len, reps)
        if best is None:
            out.append(activities[i])
            i += 1
            continue
        body_len, reps = best
        iterations = tuple(
            tuple(activities[i + r * body_len : i + (r + 1) * body_len])
            for r in range(reps)
        )
        fold = LoopFold(iterations=iterations)
        body = fold.body_keys
        counts[body] = max(counts.get(body, 0), reps)
        out.append(fold)
        i += body_len * reps
    return out, counts


def expand_folds(folded: Sequence[FoldedItem]) -> list[ActivityInstance]:
    out: list[ActivityInstance] = []
    for item in folded:
        if isinstance(item, LoopFold):
            for it in item.iterations:
                out.extend(it)
        else:
            out.append(item)
    return out


# ---------------------------------------------------------------------------
# Summarization.


_DESCRIPTIONS = {
    "Type": "fill field {role}",
    "Click": "press {role}",
    "Submit": "press {role}",
    "Select": "select {role}",
    "Navigate": "go to {role}",
}


def describe(key: TemplateKey) -> str:
    kind, role = key
    return _DESCRIPTIONS.get(kind, "do {role}").format(role=role)


def _trace_walk(
    trace: Trace, activities: Sequence[ActivityInstance]
) -> list[tuple[NodeKey, ActivityInstance, NodeKey]]:
    """Signature-keyed walk of a trace: (pre, activity, post) per activity."""
    sigs: list[NodeKey] = []
    for act in activities:
        snap = trace.events[act.origin_span[0]].state_snapshot
        sigs.append((snap.page, snap.completed))
    sigs.append((trace.final_snapshot.page, trace.final_snapshot.completed))
    return [(sigs[i], activities[i], sigs[i + 1]) for i in range(len(activities))]


def _check_internal_consistency(trace: Trace, walk) -> None:
    first_pre = walk[0][0]
    if first_pre[1] != frozenset():
        raise UnreproducibleTrace(
            f"trace {trace.trace_id}: first snapshot is not a fresh session"
        )
    for pre, act, post in walk:
        if post[1] != pre[1] | {act.template.key}:
            raise UnreproducibleTrace(
                f"trace {trace.trace_id}: snapshot chain broken at {act.template.key_text}"
            )


def _precedence_pairs(keys: Sequence[TemplateKey]) -> set[tuple[TemplateKey, TemplateKey]]:
    """Pairs (b, a) where every occurrence of b precedes every occurrence of a."""
    positions: dict[TemplateKey, list[int]] = {}
    for i, k in enumerate(keys):
        positions.setdefault(k, []).append(i)
    pairs: set[tuple[TemplateKey, TemplateKey]] = set()
    for b, bpos in positions.items():
        for a, apos in positions.items():
            if a != b and max(bpos) < min(apos):
                pairs.add((b, a))
    return pairs


def summarize(
    traces: Sequence[Trace],
    world_fingerprint: Fingerprint,
    enum_threshold: int = DEFAULT_ENUM_THRESHOLD,
) -> Experience:
    """Generalize traces of one task into a two-level experience."""
    if not traces:
        raise SummaryError("no traces to summarize")
    labels = {t.task_label for t in traces}
    if len(labels) != 1:
        raise MixedTask(f"traces span multiple tasks: {sorted(labels)}")
    for t in traces:
        if t.env_fingerprint.role_digest != world_fingerprint.role_digest:
            raise IncompatibleWorlds(
                f"trace {t.trace_id} was recorded against a structurally different world"
            )

    abstracted = {t.trace_id: abstract_trace(t) for t in traces}
    walks = {t.trace_id: _trace_walk(t, abstracted[t.trace_id]) for t in traces}
    for t in traces:
        _check_internal_consistency(t, walks[t.trace_id])

    page_paths = set()
    for t in traces:
        pages: list[str] = []
        for pre, _act, post in walks[t.trace_id]:
            for page in (pre[0], post[0]):
                if not pages or pages[-1] != page:
                    pages.append(page)
        page_paths.add(tuple(pages))
    if len(page_paths) != 1:
        raise StructureDivergence(
            "traces navigate different page structures and cannot be merged"
        )

    # Loop detection per trace; bounds are the longest observed instance.
    loop_counts: dict[tuple[TemplateKey, ...], int] = {}
    for t in traces:
        _folded, counts = fold_loops(abstracted[t.trace_id])
        for body, count in counts.items():
            loop_counts[body] = max(loop_counts.get(body, 0), count)
    loops = tuple(
        LoopSpec(
            loop_id="loop:" + ">".join(key_str(k) for k in body),
            body=body,
            bound=bound,
        )
        for body, bound in sorted(loop_counts.items(), key=lambda kv: kv[0])
    )

    # Merge witnessed steps into the automaton.
    node_sigs: dict[str, NodeKey] = {}
    edge_targets: dict[tuple[str, TemplateKey], str] = {}
    edge_elements: dict[tuple[str, TemplateKey], str | None] = {}
    edge_args: dict[tuple[str, TemplateKey], dict[str, list[str]]] = {}
    accept_nodes: set[str] = set()
    start_nodes: set[str] = set()
    for t in traces:
        walk = walks[t.trace_id]
        start_nodes.add(node_id(*walk[0][0]))
        for pre, act, post in walk:
            src = node_id(*pre)
            dst = node_id(*post)
            node_sigs.setdefault(src, pre)
            node_sigs.setdefault(dst, post)
            ek = (src, act.template.key)
            if ek in edge_targets:
                if edge_targets[ek] != dst or edge_elements[ek] != act.template.element_id:
                    raise SummaryError(
                        f"nondeterministic transition for {act.template.key_text} at {src}"
                    )
            else:
                edge_targets[ek] = dst
                edge_elements[ek] = act.template.element_id
                edge_args[ek] = {}
            for name, value in act.args:
                edge_args[ek].setdefault(name, []).append(value)
        accept_nodes.add(node_id(*walk[-1][2]))
    if len(start_nodes) != 1:
        raise StructureDivergence("traces start from different states")
    start_node = next(iter(start_nodes))

    # High-level plan: one step per distinct key, ids by first appearance.
    key_order: list[TemplateKey] = []
    key_args: dict[TemplateKey, dict[str, list[str]]] = {}
    key_max_occurrences: dict[TemplateKey, int] = {}
    for t in traces:
        seen_counts: dict[TemplateKey, int] = {}
        for act in abstracted[t.trace_id]:
            k = act.template.key
            if k not in key_order:
                key_order.append(k)
            seen_counts[k] = seen_counts.get(k, 0) + 1
            for name, value in act.args:
                key_args.setdefault(k, {}).setdefault(name, []).append(value)
        for k, c in seen_counts.items():
            key_max_occurrences[k] = max(key_max_occurrences.get(k, 0), c)

    order_sets = [
        _precedence_pairs([a.template.key for a in abstracted[t.trace_id]]) for t in traces
    ]
    order_constraints = frozenset(set.intersection(*order_sets)) if order_sets else frozenset()

    dep_check = CheckFunction("DependencyOrder", (("source", "order_constraints"),))
    steps = []
    loop_bounds_high: dict[int, int] = {}
    for step_id, k in enumerate(key_order):
        constraints = {
            name: infer_constraint(values, enum_threshold)
            for name, values in key_args.get(k, {}).items()
        }
        checks = [CheckFunction("FlowConformance"), dep_check]
        if constraints:
            checks.append(CheckFunction("ParamConstraintCheck"))
        if key_max_occurrences[k] > 1:
            loop_bounds_high[step_id] = key_max_occurrences[k]
            checks.append(
                CheckFunction("LoopBound", (("limit", key_max_occurrences[k]),))
            )
        steps.append(
            AbstractStep(
                step_id=step_id,
                description=describe(k),
                key=k,
                param_constraints=tuple(sorted(constraints.items())),
                checks=tuple(checks),
            )
        )

    edges = []
    for (src, key), dst in sorted(edge_targets.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        constraints = {
            name: infer_constraint(values, enum_threshold)
            for name, values in edge_args[(src, key)].items()
        }
        precondition = node_sigs[src][1]
        checks = [
            CheckFunction("FlowConformance"),
            CheckFunction(
                "Precondition",
                (("required", tuple(sorted(key_str(k) for k in precondition))),),
            ),
            dep_check,
        ]
        if constraints:
            checks.append(CheckFunction("ParamConstraintCheck"))
        for loop in loops:
            if key in loop.body:
                checks.append(
                    CheckFunction(
                        "LoopBound", (("limit", loop.bound), ("loop_id", loop.loop_id))
                    )
                )
        edges.append(
            Edge(
                src=src,
                dst=dst,
                template=ActionTemplate(key[0], key[1], edge_elements[(src, key)]),
                precondition=precondition,
                param_constraints=constraints,
                checks=tuple(checks),
            )
        )

    trace_ids = tuple(t.trace_id for t in traces)
    created_at = sum(t.events[-1].timestamp for t in traces)
    experience_id = hashlib.sha256(
        json.dumps([traces[0].task_label, sorted(trace_ids), created_at]).encode()
    ).hexdigest()[:16]

    return Experience(
        experience_id=experience_id,
        task_label=traces[0].task_label,
        env_fingerprint=world_fingerprint,
        low=LowLevelExperience(
            node_signatures=node_sigs,
            edges=tuple(edges),
            start_node=start_node,
            accept_nodes=frozenset(accept_nodes),
            loops=loops,
            source_trace_ids=trace_ids,
        ),
        high=HighLevelExperience(
            steps=tuple(steps),
            order_constraints=order_constraints,
            loop_bounds=loop_bounds_high,
        ),
        metadata=ExperienceMetadata(created_at=created_at, source_trace_ids=trace_ids),
        source_activities={tid: tuple(acts) for tid, acts in abstracted.items()},
    )


# ---------------------------------------------------------------------------
# Brute-force language enumeration (the conservativeness oracle's raw
# material; also used directly by the offline verifier).


def enumerate_language(
    low: LowLevelExperience, max_len: int
) -> set[tuple[TemplateKey, ...]]:
    """All template-key sequences the automaton accepts, up to max_len.

    Exhaustive depth-first walk respecting loop bounds. Raises
    ExplosionGuard beyond ENUMERATION_LIMIT explored sequences.
    """
    edges_by_src: dict[str, list[Edge]] = {}
    for e in low.edges:
        edges_by_src.setdefault(e.src, []).append(e)

    accepted: set[tuple[TemplateKey, ...]] = set()
    explored = 0

    limit = ENUMERATION_LIMIT

    def walk(node: str, seq: tuple[TemplateKey, ...], loop_states: dict[str, LoopState]) -> None:
        nonlocal explored
        explored += 1
        if explored > limit:
            raise ExplosionGuard(f"enumeration exceeded {limit} sequences")
        if node in low.accept_nodes and seq:
            accepted.add(seq)
        if len(seq) >= max_len:
            return
        for edge in edges_by_src.get(node, ()):
            key = edge.template.key
            new_states = {}
            violated = False
            for loop in low.loops:
                st = loop_step(loop.body, loop_states.get(loop.loop_id, LoopState()), key)
                if st.iters > loop.bound:
                    violated = True
                    break
                new_states[loop.loop_id] = st
            if violated:
                continue
            walk(edge.dst, seq + (key,), new_states)

    walk(low.start_node, (), {})
    return accepted
