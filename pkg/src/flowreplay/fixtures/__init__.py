"""Bundled demo world and demonstration scripts.

The demo form mirrors the three-field case: fields name, gate and date plus
a submit button. Trace A fills the fields in order; trace B starts with the
gate, so the summarized ordering relation requires the name before the date
but leaves the gate free to go first. A replay that fills the gate and then
jumps to the date is therefore denied with a dependency-order verdict.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

FIXTURE_NAMES = ("demo_world.json", "trace_a_script.json", "trace_b_script.json")


def fixture_path(name: str) -> Path:
    """Filesystem path of a bundled fixture file."""
    if name not in FIXTURE_NAMES:
        raise KeyError(f"unknown fixture {name!r}; have {FIXTURE_NAMES}")
    return Path(resources.files(__package__) / name)


def export_fixtures(out_dir: str | Path) -> list[Path]:
    """Copy all bundled fixtures into a directory for hands-on use."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in FIXTURE_NAMES:
        target = out_dir / name
        target.write_text(fixture_path(name).read_text(encoding="utf-8"), encoding="utf-8")
        written.append(target)
    return written
