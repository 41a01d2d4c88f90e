"""Offline conservativeness auditor.

Brute-force checks that a summarized experience admits no behavior beyond
what its source traces witnessed. Four audits: containment (every source
trace is accepted), witness (every enumerated step was demonstrated), order
(every enumerated sequence respects the ordering relation), and loops (no
sequence exceeds an observed repetition bound). Advisory and outside the
replay path by design.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import TemplateKey, Trace, abstract_trace, key_str
from .summarize import Experience, enumerate_language, node_id


@dataclass(frozen=True)
class Violation:
    sequence: tuple[TemplateKey, ...]
    detail: str

    def render(self) -> str:
        seq = " -> ".join(key_str(k) for k in self.sequence) or "(empty)"
        return f"{seq}: {self.detail}"


@dataclass
class AuditResult:
    name: str
    passed: bool = True
    checked: int = 0
    violations: list[Violation] = field(default_factory=list)

    def fail(self, sequence: tuple[TemplateKey, ...], detail: str) -> None:
        self.passed = False
        self.violations.append(Violation(sequence, detail))


@dataclass
class VerifyReport:
    containment: AuditResult
    witness: AuditResult
    order: AuditResult
    loops: AuditResult
    language_size: int = 0

    @property
    def passed(self) -> bool:
        return all(
            a.passed for a in (self.containment, self.witness, self.order, self.loops)
        )

    def audits(self) -> list[AuditResult]:
        return [self.containment, self.witness, self.order, self.loops]


def _witnessed_steps(traces: list[Trace]) -> set[tuple[str, TemplateKey, str]]:
    """(source node, key, target node) triples demonstrated by the traces."""
    steps: set[tuple[str, TemplateKey, str]] = set()
    for trace in traces:
        activities = abstract_trace(trace)
        nodes = []
        for act in activities:
            snap = trace.events[act.origin_span[0]].state_snapshot
            nodes.append(node_id(snap.page, snap.completed))
        nodes.append(node_id(trace.final_snapshot.page, trace.final_snapshot.completed))
        for i, act in enumerate(activities):
            steps.add((nodes[i], act.template.key, nodes[i + 1]))
    return steps


def _max_consecutive_reps(seq: tuple[TemplateKey, ...], body: tuple[TemplateKey, ...]) -> int:
    """Longest run of back-to-back repetitions of body inside seq."""
    best = 0
    n, m = len(seq), len(body)
    for start in range(n):
        reps = 0
        while seq[start + reps * m : start + (reps + 1) * m] == body:
            reps += 1
        best = max(best, reps)
    return best


def verify_experience(
    exp: Experience, traces: list[Trace], max_len: int
) -> VerifyReport:
    """Run all four audits; violations carry a minimal counterexample."""
    longest = max(len(abstract_trace(t)) for t in traces) if traces else 0
    max_len = max(max_len, longest)
    language = enumerate_language(exp.low, max_len)
    ordered = sorted(language, key=lambda s: (len(s), s))

    containment = AuditResult("containment", checked=len(traces))
    for trace in traces:
        seq = tuple(a.template.key for a in abstract_trace(trace))
        if seq not in language:
            containment.fail(seq, f"source trace {trace.trace_id} is not accepted")

    witnessed = _witnessed_steps(traces)
    witness = AuditResult("witness", checked=len(ordered))
    edges = {(e.src, e.template.key): e.dst for e in exp.low.edges}
    for seq in ordered:
        node = exp.low.start_node
        for i, key in enumerate(seq):
            dst = edges.get((node, key))
            if dst is None or (node, key, dst) not in witnessed:
                # Minimal counterexample: the prefix up to the rogue step.
                witness.fail(
                    seq[: i + 1], f"step {key_str(key)} from {node} was never demonstrated"
                )
                break
            node = dst
        if not witness.passed:
            break

    order = AuditResult("order", checked=len(ordered))
    for seq in ordered:
        done: set[TemplateKey] = set()
        for key in seq:
            for before, after in exp.high.order_constraints:
                if after == key and before not in done:
                    order.fail(
                        seq,
                        f"{key_str(key)} executed before {key_str(before)}",
                    )
                    break
            if not order.passed:
                break
            done.add(key)
        if not order.passed:
            break

    loops = AuditResult("loops", checked=len(ordered))
    for seq in ordered:
        for loop in exp.low.loops:
            reps = _max_consecutive_reps(seq, loop.body)
            if reps > loop.bound:
                loops.fail(
                    seq,
                    f"loop {loop.loop_id} repeated {reps}x, bound is {loop.bound}",
                )
                break
        if not loops.passed:
            break

    return VerifyReport(
        containment=containment,
        witness=witness,
        order=order,
        loops=loops,
        language_size=len(language),
    )


def format_report(report: VerifyReport) -> str:
    lines = [f"enumerated language size: {report.language_size}"]
    for audit in report.audits():
        status = "PASS" if audit.passed else "FAIL"
        lines.append(f"[{status}] {audit.name} ({audit.checked} checked)")
        for v in audit.violations:
            lines.append(f"    counterexample: {v.render()}")
    lines.append("verdict: " + ("PASS" if report.passed else "FAIL"))
    return "\n".join(lines)
