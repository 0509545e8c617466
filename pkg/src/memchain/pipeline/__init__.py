"""Run orchestration and audit traces."""

from .config import (
    DEFAULT_BUDGET_TOKENS,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_TC_LIMIT,
    RunConfig,
    expected_calls,
    model_preset,
)
from .runner import RunResult, run_coa, run_coma, run_method, run_tc
from .trace import (
    RunTrace,
    TraceEvent,
    TraceRecord,
    TraceRecorder,
    load_trace,
    persist_trace,
    text_digest,
    track_text,
)

__all__ = [
    "DEFAULT_BUDGET_TOKENS",
    "DEFAULT_CHUNK_SIZE",
    "DEFAULT_TC_LIMIT",
    "RunConfig",
    "RunResult",
    "RunTrace",
    "TraceEvent",
    "TraceRecord",
    "TraceRecorder",
    "expected_calls",
    "load_trace",
    "persist_trace",
    "run_coa",
    "run_coma",
    "run_method",
    "run_tc",
    "text_digest",
    "track_text",
]
