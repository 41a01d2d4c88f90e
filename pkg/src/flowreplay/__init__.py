"""flowreplay: record, summarize and replay agent workflows under
execution flow integrity enforcement."""

from .core import (
    ActionTemplate,
    ActivityInstance,
    Fingerprint,
    FlowReplayError,
    MalformedTrace,
    StateSignature,
    Trace,
    TraceEvent,
    abstract_trace,
    mask_sensitive,
    read_trace,
    write_trace,
)
from .monitor import (
    CheckFunction,
    InconsistentContext,
    MonitorContext,
    NotAllowed,
    ParamConstraint,
    Verdict,
    advance,
    check,
    high_context,
    low_context,
)
from .record import DemoScript, DemoStep, RecordingError, record, verify_reproducible
from .replay import (
    AuditRecord,
    Planner,
    ReplayResult,
    StubPlanner,
    TaskRequest,
    read_audit,
    replay,
    report_outcome,
    write_audit,
)
from .summarize import (
    AbstractStep,
    Edge,
    Experience,
    ExplosionGuard,
    HighLevelExperience,
    LowLevelExperience,
    enumerate_language,
    fold_loops,
    load_experience,
    save_experience,
    summarize,
)
from .verify import VerifyReport, format_report, verify_experience
from .world import (
    ElementSpec,
    EnvState,
    PageSpec,
    WorldSpec,
    apply,
    fingerprint,
    initial_state,
    load_world,
    perturb,
    signature_of,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
