"""Report rendering: delimited audit exports and matplotlib figures.

Figures are written straight to files (Agg backend) so reports work in
headless runs: a timeline of one replay's audit log and a layered drawing of
an experience's low-level automaton.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .core import key_str
from .replay import AuditRecord
from .summarize import Experience

CSV_COLUMNS = [
    "tick",
    "level",
    "kind",
    "role",
    "args",
    "allowed",
    "failed_check",
    "exec_result",
    "planner_used",
    "experience_id",
]


def write_records_csv(records: Iterable[AuditRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.tick,
                    r.level,
                    r.action.template.kind,
                    r.action.template.element_role,
                    ";".join(f"{k}={v}" for k, v in r.action.args),
                    r.verdict.allowed,
                    r.verdict.failed_check or "",
                    r.exec_result or "",
                    r.planner_used,
                    r.experience_id,
                ]
            )


def plot_audit_timeline(records: Sequence[AuditRecord], path: str | Path) -> None:
    """One row per attempted action, colored by verdict and outcome."""
    fig, ax = plt.subplots(figsize=(8, max(2.0, 0.5 * len(records) + 1)))
    for i, r in enumerate(records):
        if not r.verdict.allowed:
            color = "firebrick"
        elif r.exec_result == "ok":
            color = "seagreen"
        else:
            color = "darkorange"
        marker = "s" if r.planner_used else "o"
        ax.scatter(r.tick, i, c=color, marker=marker, s=80, zorder=3)
        label = f"{r.action.template.kind}/{r.action.template.element_role}"
        if not r.verdict.allowed:
            label += f"  [deny: {r.verdict.failed_check}]"
        elif r.exec_result and r.exec_result != "ok":
            label += f"  [{r.exec_result}]"
        ax.annotate(label, (r.tick, i), xytext=(8, 0), textcoords="offset points",
                    va="center", fontsize=8)
    ax.set_yticks(range(len(records)))
    ax.set_yticklabels([f"{r.level} #{i}" for i, r in enumerate(records)], fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("environment tick")
    ax.set_title("replay audit timeline")
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_automaton(exp: Experience, path: str | Path) -> None:
    """Layered drawing of the low-level automaton.

    Nodes are placed by completed-set size, so the workflow reads left to
    right; accept nodes are double-ringed.
    """
    low = exp.low
    layers: dict[int, list[str]] = {}
    for node, (_page, completed) in sorted(low.node_signatures.items()):
        layers.setdefault(len(completed), []).append(node)
    pos: dict[str, tuple[float, float]] = {}
    for depth, nodes in sorted(layers.items()):
        for j, node in enumerate(nodes):
            pos[node] = (float(depth), -float(j - (len(nodes) - 1) / 2))

    fig, ax = plt.subplots(figsize=(1.8 * (max(layers) + 1.5), 3.5 + 0.6 * max(len(v) for v in layers.values())))
    for edge in low.edges:
        (x0, y0), (x1, y1) = pos[edge.src], pos[edge.dst]
        self_loop = edge.src == edge.dst
        if self_loop:
            ax.annotate(
                "",
                xy=(x0 + 0.08, y0 + 0.12),
                xytext=(x0 - 0.08, y0 + 0.12),
                arrowprops=dict(arrowstyle="->", color="gray",
                                connectionstyle="arc3,rad=1.6"),
            )
            lx, ly = x0, y0 + 0.42
        else:
            ax.annotate(
                "",
                xy=(x1, y1),
                xytext=(x0, y0),
                arrowprops=dict(arrowstyle="->", color="gray", shrinkA=14, shrinkB=14),
            )
            lx, ly = (x0 + x1) / 2, (y0 + y1) / 2 + 0.08
        ax.text(lx, ly, key_str(edge.template.key), fontsize=7, ha="center",
                color="dimgray")
    for node, (x, y) in pos.items():
        page, completed = low.node_signatures[node]
        is_accept = node in low.accept_nodes
        is_start = node == low.start_node
        face = "gold" if is_start else "lightsteelblue"
        ax.scatter(x, y, s=700, c=face, edgecolors="black", zorder=3,
                   linewidths=2.2 if is_accept else 1.0)
        ax.annotate(f"{page}\n|{len(completed)}|", (x, y), ha="center", va="center",
                    fontsize=7, zorder=4)
    ax.set_title(f"experience {exp.experience_id} ({exp.task_label})")
    ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(
    records: Sequence[AuditRecord],
    out_dir: str | Path,
    exp: Experience | None = None,
) -> list[Path]:
    """Write the full report bundle; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    csv_path = out_dir / "audit.csv"
    write_records_csv(records, csv_path)
    written.append(csv_path)
    if records:
        timeline = out_dir / "timeline.png"
        plot_audit_timeline(records, timeline)
        written.append(timeline)
    if exp is not None:
        automaton = out_dir / "automaton.png"
        plot_automaton(exp, automaton)
        written.append(automaton)
    return written
