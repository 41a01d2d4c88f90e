"""Local file-based experience store.

Layout: ``<root>/index.json`` plus one ``<root>/<experience_id>.json`` per
experience. All writes go through temp-file-then-rename so a crash never
leaves a corrupt index, and a per-root advisory lock serializes writers.
"""

from __future__ import annotations

import fcntl
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Mapping

from .core import FlowReplayError, Fingerprint
from .summarize import Experience

INDEX_NAME = "index.json"
LOCK_NAME = ".lock"

LEVEL_LOW = "Low"
LEVEL_HIGH = "High"


class StoreError(FlowReplayError):
    pass


class NotFound(StoreError):
    pass


@dataclass(frozen=True)
class IndexEntry:
    experience_id: str
    task_label: str
    role_digest: str
    created_at: int
    success_count: int
    failure_count: int
    path: str

    @property
    def success_rate(self) -> float:
        return self.success_count / max(1, self.success_count + self.failure_count)

    def to_dict(self) -> dict:
        return {
            "experience_id": self.experience_id,
            "task_label": self.task_label,
            "role_digest": self.role_digest,
            "created_at": self.created_at,
            "success_count": self.success_count,
            "failure_count": self.failure_count,
            "path": self.path,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "IndexEntry":
        return cls(
            experience_id=d["experience_id"],
            task_label=d["task_label"],
            role_digest=d["role_digest"],
            created_at=int(d["created_at"]),
            success_count=int(d["success_count"]),
            failure_count=int(d["failure_count"]),
            path=d["path"],
        )


@dataclass
class StoreIndex:
    entries: list[IndexEntry]

    def get(self, experience_id: str) -> IndexEntry | None:
        for e in self.entries:
            if e.experience_id == experience_id:
                return e
        return None


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


@contextmanager
def _write_lock(root: Path) -> Iterator[None]:
    root.mkdir(parents=True, exist_ok=True)
    lock_path = root / LOCK_NAME
    with lock_path.open("w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _read_index(root: Path) -> StoreIndex:
    path = root / INDEX_NAME
    if not path.exists():
        return StoreIndex(entries=[])
    data = json.loads(path.read_text(encoding="utf-8"))
    return StoreIndex(entries=[IndexEntry.from_dict(e) for e in data.get("entries", ())])


def _write_index(root: Path, index: StoreIndex) -> None:
    index.entries.sort(key=lambda e: (e.created_at, e.experience_id))
    payload = {"entries": [e.to_dict() for e in index.entries]}
    _atomic_write(root / INDEX_NAME, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def save(exp: Experience, root: str | Path) -> str:
    """Persist an experience and update the index atomically.

    Re-saving an existing id overwrites the content but keeps the store's
    success counters and creation stamp.
    """
    root = Path(root)
    with _write_lock(root):
        index = _read_index(root)
        existing = index.get(exp.experience_id)
        if existing is not None:
            created_at = existing.created_at
            success, failure = existing.success_count, existing.failure_count
        else:
            created_at = max((e.created_at for e in index.entries), default=0) + 1
            success, failure = exp.metadata.success_count, exp.metadata.failure_count
        exp = replace(
            exp,
            metadata=replace(exp.metadata, success_count=success, failure_count=failure),
        )
        filename = f"{exp.experience_id}.json"
        _atomic_write(
            root / filename, json.dumps(exp.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        entry = IndexEntry(
            experience_id=exp.experience_id,
            task_label=exp.task_label,
            role_digest=exp.env_fingerprint.role_digest,
            created_at=created_at,
            success_count=success,
            failure_count=failure,
            path=filename,
        )
        index.entries = [e for e in index.entries if e.experience_id != exp.experience_id]
        index.entries.append(entry)
        _write_index(root, index)
    return exp.experience_id


def list_experiences(root: str | Path) -> StoreIndex:
    """Index of stored experiences, ordered by creation."""
    return _read_index(Path(root))


def load(root: str | Path, experience_id: str) -> Experience:
    root = Path(root)
    entry = _read_index(root).get(experience_id)
    path = root / (entry.path if entry else f"{experience_id}.json")
    if not path.exists():
        raise NotFound(f"no experience {experience_id!r} in {root}")
    return Experience.from_dict(json.loads(path.read_text(encoding="utf-8")))


def record_outcome(root: str | Path, experience_id: str, success: bool) -> None:
    """Bump the success or failure counter for one experience."""
    root = Path(root)
    with _write_lock(root):
        index = _read_index(root)
        entry = index.get(experience_id)
        if entry is None:
            raise NotFound(f"no experience {experience_id!r} in {root}")
        if success:
            entry = replace(entry, success_count=entry.success_count + 1)
        else:
            entry = replace(entry, failure_count=entry.failure_count + 1)
        index.entries = [
            entry if e.experience_id == experience_id else e for e in index.entries
        ]
        # Keep the experience file's own metadata in sync with the index.
        exp = Experience.from_dict(
            json.loads((root / entry.path).read_text(encoding="utf-8"))
        )
        exp = replace(
            exp,
            metadata=replace(
                exp.metadata,
                success_count=entry.success_count,
                failure_count=entry.failure_count,
            ),
        )
        _atomic_write(
            root / entry.path, json.dumps(exp.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        _write_index(root, index)


def select(
    root: str | Path, task_label: str, world_fp: Fingerprint
) -> list[tuple[str, str]]:
    """Rank stored experiences for a task on a given world.

    Exact-digest matches rank first (replayable at the low level), then by
    success rate, then by recency. Returns (experience_id, level hint) pairs.
    """
    root = Path(root)
    candidates = []
    for entry in _read_index(root).entries:
        if entry.task_label != task_label or entry.role_digest != world_fp.role_digest:
            continue
        exp = load(root, entry.experience_id)
        exact = exp.env_fingerprint.digest == world_fp.digest
        candidates.append((entry, exact))
    candidates.sort(
        key=lambda ce: (ce[1], ce[0].success_rate, ce[0].created_at), reverse=True
    )
    return [
        (entry.experience_id, LEVEL_LOW if exact else LEVEL_HIGH)
        for entry, exact in candidates
    ]
