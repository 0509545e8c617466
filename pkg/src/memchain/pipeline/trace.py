"""Append-only run traces with chained digests.

A trace is a JSON-lines file. The first record echoes the run configuration; each
later record carries the digest of its predecessor, so editing, dropping or
reordering any line is detected by :func:`load_trace`. Replays are compared with
:meth:`RunTrace.canonical_lines`, which drops wall-clock fields and the digests.
"""

from __future__ import annotations

import hashlib
import json
import threading
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from pydantic import BaseModel, ConfigDict, ValidationError

from ..config import Method
from ..errors import ErrorCode, engine_error
from .config import expected_calls

GENESIS = "0" * 64
WALL_FIELDS = frozenset({"ts", "latency_ms", "wall_ms"})
CHAIN_FIELDS = frozenset({"prev", "digest"})


class TraceEvent(str, Enum):
    CONFIG = "config"
    SEGMENTED = "segmented"
    EXCHANGE = "exchange"
    SNAPSHOT = "snapshot"
    WARNING = "warning"
    ANSWER = "answer"
    ERROR = "error"
    END = "end"


class TraceRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    seq: int
    event: TraceEvent
    ts: str
    data: dict[str, Any]
    prev: str
    digest: str


def _without_wall(data: Mapping[str, Any]) -> dict[str, Any]:
    return {key: value for key, value in data.items() if key not in WALL_FIELDS}


def record_digest(
    seq: int, event: TraceEvent, ts: str, data: Mapping[str, Any], prev: str
) -> str:
    raw = json.dumps(
        {"seq": seq, "event": event.value, "ts": ts, "data": dict(data), "prev": prev},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RunTrace:
    """Ordered trace records plus the views the CLI and tests read from them."""

    def __init__(self, records: Iterable[TraceRecord] = ()) -> None:
        self.records: list[TraceRecord] = list(records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def of(self, event: TraceEvent) -> list[TraceRecord]:
        return [record for record in self.records if record.event is event]

    @property
    def config(self) -> dict[str, Any]:
        configs = self.of(TraceEvent.CONFIG)
        return dict(configs[0].data) if configs else {}

    @property
    def method(self) -> Method | None:
        raw = self.config.get("method")
        return Method(raw) if raw else None

    @property
    def chunk_count(self) -> int:
        segmented = self.of(TraceEvent.SEGMENTED)
        return int(segmented[0].data["chunks"]) if segmented else 0

    @property
    def exchanges(self) -> list[TraceRecord]:
        return self.of(TraceEvent.EXCHANGE)

    @property
    def snapshots(self) -> list[TraceRecord]:
        return self.of(TraceEvent.SNAPSHOT)

    @property
    def warnings(self) -> list[dict[str, Any]]:
        return [dict(record.data) for record in self.of(TraceEvent.WARNING)]

    @property
    def answer(self) -> str | None:
        answers = self.of(TraceEvent.ANSWER)
        return str(answers[-1].data["answer"]) if answers else None

    @property
    def complete(self) -> bool:
        return bool(self.of(TraceEvent.END))

    @property
    def failed(self) -> bool:
        return bool(self.of(TraceEvent.ERROR))

    @property
    def wall_ms(self) -> int:
        ends = self.of(TraceEvent.END)
        return int(ends[-1].data.get("wall_ms", 0)) if ends else 0

    def calls_by_role(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for record in self.exchanges:
            role = str(record.data["role"])
            counts[role] = counts.get(role, 0) + 1
        return dict(sorted(counts.items()))

    def tokens_by_role(self) -> dict[str, dict[str, int]]:
        totals: dict[str, dict[str, int]] = {}
        for record in self.exchanges:
            entry = totals.setdefault(
                str(record.data["role"]), {"prompt_tokens": 0, "completion_tokens": 0}
            )
            entry["prompt_tokens"] += int(record.data.get("prompt_tokens", 0))
            entry["completion_tokens"] += int(record.data.get("completion_tokens", 0))
        return dict(sorted(totals.items()))

    def stats(self) -> dict[str, Any]:
        """Agent calls per role against the formula for the method."""

        calls = self.calls_by_role()
        total = sum(calls.values())
        method = self.method
        expected = expected_calls(method, self.chunk_count) if method else None
        tokens = self.tokens_by_role()
        return {
            "method": method.value if method else None,
            "chunks": self.chunk_count,
            "calls": calls,
            "total_calls": total,
            "expected_calls": expected,
            "formula_holds": expected == total,
            "requests": sum(len(record.data.get("replies", ())) for record in self.exchanges),
            "prompt_tokens": sum(entry["prompt_tokens"] for entry in tokens.values()),
            "completion_tokens": sum(entry["completion_tokens"] for entry in tokens.values()),
            "warnings": len(self.of(TraceEvent.WARNING)),
            "complete": self.complete,
        }

    def canonical_lines(self) -> list[str]:
        """Records as JSON without wall-clock fields or digests; equal across replays."""

        lines = []
        for record in self.records:
            payload = {
                key: value
                for key, value in record.model_dump(mode="json").items()
                if key not in WALL_FIELDS | CHAIN_FIELDS
            }
            payload["data"] = _without_wall(payload["data"])
            lines.append(json.dumps(payload, sort_keys=True, ensure_ascii=False))
        return lines


class TraceRecorder:
    """Builds a :class:`RunTrace`, streaming each record to ``path`` when given."""

    def __init__(self, path: Path | None = None) -> None:
        self.path = path
        self.trace = RunTrace()
        self._lock = threading.Lock()
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("", encoding="utf-8")

    def emit(self, event: TraceEvent, data: Mapping[str, Any]) -> TraceRecord:
        with self._lock:
            seq = len(self.trace.records)
            prev = self.trace.records[-1].digest if self.trace.records else GENESIS
            payload = json.loads(json.dumps(dict(data), ensure_ascii=False, default=str))
            ts = datetime.now(timezone.utc).isoformat()
            record = TraceRecord(
                seq=seq,
                event=event,
                ts=ts,
                data=payload,
                prev=prev,
                digest=record_digest(seq, event, ts, payload, prev),
            )
            self.trace.records.append(record)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(record.model_dump_json() + "\n")
            return record

    def warn(self, kind: str, **data: Any) -> TraceRecord:
        return self.emit(TraceEvent.WARNING, {"kind": kind, **data})


def persist_trace(trace: RunTrace, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in trace.records:
            handle.write(record.model_dump_json() + "\n")


def _integrity_error(path: Path, line: int, reason: str) -> Exception:
    return engine_error(
        ErrorCode.TRACE_INTEGRITY,
        "Trace failed verification",
        details={"path": str(path), "line": line, "reason": reason},
    )


def load_trace(path: Path) -> RunTrace:
    """Read and verify a trace; any digest or chain mismatch raises TRACE_INTEGRITY."""

    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise engine_error(
            ErrorCode.CONFIG, "Cannot read trace", details={"path": str(path)}
        ) from exc
    try:
        lines = raw.decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise _integrity_error(path, 0, "not valid UTF-8") from exc

    records: list[TraceRecord] = []
    prev = GENESIS
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = TraceRecord.model_validate_json(line)
        except ValidationError as exc:
            raise _integrity_error(path, number, "malformed record") from exc
        if record.seq != len(records) or record.prev != prev:
            raise _integrity_error(path, number, "broken chain")
        expected = record_digest(record.seq, record.event, record.ts, record.data, record.prev)
        if record.digest != expected:
            raise _integrity_error(path, number, "record digest mismatch")
        if record.event is TraceEvent.SNAPSHOT:
            content = record.data.get("memory", record.data.get("summary"))
            if not isinstance(content, str) or text_digest(content) != record.data.get("digest"):
                raise _integrity_error(path, number, "snapshot digest mismatch")
        records.append(record)
        prev = record.digest
    return RunTrace(records)


def track_text(trace: RunTrace, needle: str) -> list[dict[str, Any]]:
    """Every snapshot, in order, with whether its memory or summary contains ``needle``.

    A run of ``True`` followed by ``False`` shows a fact that was captured and later lost.
    """

    needle_folded = " ".join(needle.split()).casefold()
    hits = []
    for record in trace.snapshots:
        content = str(record.data.get("memory", record.data.get("summary", "")))
        hits.append(
            {
                "seq": record.seq,
                "phase": record.data.get("phase"),
                "chunk": record.data.get("chunk"),
                "present": needle_folded in " ".join(content.split()).casefold(),
            }
        )
    return hits


__all__ = [
    "GENESIS",
    "RunTrace",
    "TraceEvent",
    "TraceRecord",
    "TraceRecorder",
    "load_trace",
    "persist_trace",
    "record_digest",
    "text_digest",
    "track_text",
]
