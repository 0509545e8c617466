"""The three answering methods: structured-memory chain, rolling summary, truncated context."""

from __future__ import annotations

import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

from ..agents import (
    AgentDelta,
    answer_from_document,
    answer_from_summary,
    extract,
    infer,
    plan,
    refine,
    summarize_chunk,
    synthesize,
)
from ..chunking import count_tokens, segment, truncate_head, truncate_middle
from ..config import Method
from ..errors import EngineException, ErrorCode, engine_error
from ..llm_client import LlmBackend, UsageLedger
from ..logging import get_logger
from ..memory import (
    Memory,
    QuestionOrigin,
    append_gathered,
    append_inferred,
    make_questions,
    new_memory,
    prune,
    replace_questions,
    serialize_memory,
    with_answer,
)
from .config import RunConfig
from .trace import RunTrace, TraceEvent, TraceRecorder, text_digest

logger = get_logger(__name__)

RunResult = tuple[str, RunTrace]


@contextmanager
def _tracked(
    recorder: TraceRecorder,
    method: Method,
    cfg: RunConfig,
    query: str,
    document: str,
    ledger: UsageLedger,
) -> Iterator[None]:
    if not query.strip():
        raise engine_error(ErrorCode.VALIDATION, "Query must be non-empty")
    if not document.strip():
        raise engine_error(ErrorCode.VALIDATION, "Document must be non-empty")

    started = time.monotonic()
    recorder.emit(
        TraceEvent.CONFIG,
        {
            **cfg.model_dump(mode="json"),
            "method": method.value,
            "query": query,
            "document_sha256": text_digest(document),
            "document_chars": len(document),
        },
    )
    logger.info("run_started", method=method.value, document_chars=len(document))
    try:
        yield
    except EngineException as exc:
        recorder.emit(TraceEvent.ERROR, exc.error.to_dict())
        logger.error("run_failed", method=method.value, code=exc.code.value, message=str(exc))
        raise
    except Exception as exc:
        recorder.emit(
            TraceEvent.ERROR,
            {"code": "INTERNAL", "message": str(exc), "type": type(exc).__name__},
        )
        logger.exception("run_failed", method=method.value)
        raise

    wall_ms = int((time.monotonic() - started) * 1000)
    recorder.emit(
        TraceEvent.END,
        {
            "wall_ms": wall_ms,
            "requests": ledger.total_calls,
            "prompt_tokens": ledger.total_prompt_tokens,
            "completion_tokens": ledger.total_completion_tokens,
        },
    )
    logger.info(
        "run_finished", method=method.value, requests=ledger.total_calls, wall_ms=wall_ms
    )


def _exchange(recorder: TraceRecorder, delta: AgentDelta) -> None:
    recorder.emit(
        TraceEvent.EXCHANGE,
        {
            **delta.exchange.model_dump(mode="json"),
            "kind": delta.kind.value,
            "items": list(delta.items),
            "rationale": delta.rationale,
            "fallback": delta.fallback,
        },
    )
    if delta.fallback:
        recorder.warn(
            "parse_fallback",
            role=delta.exchange.role.value,
            chunk=delta.exchange.chunk_index,
            attempts=delta.attempts,
        )


def _memory_snapshot(
    recorder: TraceRecorder,
    phase: str,
    chunk: int | None,
    memory: Memory,
    **extra: Any,
) -> None:
    serialized = serialize_memory(memory)
    recorder.emit(
        TraceEvent.SNAPSHOT,
        {
            "phase": phase,
            "chunk": chunk,
            "memory": serialized,
            "digest": memory.digest(),
            "gathered_tokens": memory.gathered_tokens,
            **extra,
        },
    )


async def run_coma(
    query: str,
    document: str,
    cfg: RunConfig,
    backend: LlmBackend,
    *,
    trace_path: Path | None = None,
) -> RunResult:
    """Plan once, run extract/infer/refine on every chunk in order, then synthesize."""

    recorder = TraceRecorder(trace_path)
    runtime = cfg.runtime(backend)
    budget = cfg.budget
    with _tracked(recorder, Method.COMA, cfg, query, document, runtime.ledger):
        chunks = segment(document, cfg.chunk_size, cfg.tokenizer)
        recorder.emit(
            TraceEvent.SEGMENTED,
            {"chunks": len(chunks), "tokens": [chunk.tokens for chunk in chunks]},
        )

        delta = await plan(query, runtime)
        _exchange(recorder, delta)
        memory = new_memory(
            make_questions(delta.items, QuestionOrigin.PLANNER, cap=cfg.question_cap)
        )
        _memory_snapshot(recorder, "plan", None, memory)

        for chunk in chunks:
            delta = await extract(chunk, memory, query, runtime)
            _exchange(recorder, delta)
            memory = append_gathered(memory, delta.items, chunk.index, cfg.tokenizer)
            before = len(memory.gathered)
            memory = prune(memory, budget)
            evicted = before - len(memory.gathered)
            if evicted:
                logger.info(
                    "memory_pruned",
                    chunk=chunk.index,
                    evicted=evicted,
                    gathered_tokens=memory.gathered_tokens,
                )
            if memory.gathered_tokens > budget.max_tokens:
                recorder.warn(
                    "oversized_fact",
                    chunk=chunk.index,
                    tokens=memory.gathered_tokens,
                    budget=budget.max_tokens,
                )
            _memory_snapshot(recorder, "extract", chunk.index, memory, evicted=evicted)

            delta = await infer(memory, query, runtime, chunk_index=chunk.index)
            _exchange(recorder, delta)
            memory = append_inferred(memory, delta.items, cfg.tokenizer, cap=cfg.inferred_cap)
            _memory_snapshot(recorder, "infer", chunk.index, memory)

            delta = await refine(memory, query, runtime, chunk_index=chunk.index)
            _exchange(recorder, delta)
            memory = replace_questions(memory, delta.items, cap=cfg.question_cap)
            _memory_snapshot(recorder, "refine", chunk.index, memory)

        delta = await synthesize(memory, query, cfg.task_inst, runtime)
        _exchange(recorder, delta)
        answer = delta.items[0] if delta.items else ""
        memory = with_answer(memory, answer)
        _memory_snapshot(recorder, "synthesize", None, memory)
        recorder.emit(TraceEvent.ANSWER, {"answer": answer, "rationale": delta.rationale})
    return answer, recorder.trace


async def run_coa(
    query: str,
    document: str,
    cfg: RunConfig,
    backend: LlmBackend,
    *,
    trace_path: Path | None = None,
) -> RunResult:
    """Pass a free-form summary from chunk to chunk, capped at the memory budget."""

    recorder = TraceRecorder(trace_path)
    runtime = cfg.runtime(backend)
    cap = cfg.budget.max_tokens
    with _tracked(recorder, Method.COA, cfg, query, document, runtime.ledger):
        chunks = segment(document, cfg.chunk_size, cfg.tokenizer)
        recorder.emit(
            TraceEvent.SEGMENTED,
            {"chunks": len(chunks), "tokens": [chunk.tokens for chunk in chunks]},
        )

        summary = ""
        for chunk in chunks:
            delta = await summarize_chunk(chunk, summary, query, runtime)
            _exchange(recorder, delta)
            produced = delta.items[0]
            summary = truncate_head(produced, cap, cfg.tokenizer) if produced else ""
            if summary != produced:
                produced_tokens = count_tokens(produced, cfg.tokenizer)
                recorder.warn(
                    "summary_truncated", chunk=chunk.index, tokens=produced_tokens, cap=cap
                )
                logger.warning(
                    "summary_truncated", chunk=chunk.index, tokens=produced_tokens, cap=cap
                )
            recorder.emit(
                TraceEvent.SNAPSHOT,
                {
                    "phase": "summary",
                    "chunk": chunk.index,
                    "summary": summary,
                    "digest": text_digest(summary),
                    "summary_tokens": count_tokens(summary, cfg.tokenizer),
                },
            )

        delta = await answer_from_summary(summary, query, cfg.task_inst, runtime)
        _exchange(recorder, delta)
        answer = delta.items[0]
        recorder.emit(TraceEvent.ANSWER, {"answer": answer, "rationale": None})
    return answer, recorder.trace


async def run_tc(
    query: str,
    document: str,
    cfg: RunConfig,
    backend: LlmBackend,
    *,
    trace_path: Path | None = None,
) -> RunResult:
    """Answer in one call over the document with its middle removed down to ``tc_limit``."""

    recorder = TraceRecorder(trace_path)
    runtime = cfg.runtime(backend)
    with _tracked(recorder, Method.TC, cfg, query, document, runtime.ledger):
        truncated = truncate_middle(document, cfg.tc_limit, cfg.tokenizer)
        recorder.emit(
            TraceEvent.SEGMENTED,
            {
                "chunks": 1,
                "document_tokens": count_tokens(document, cfg.tokenizer),
                "kept_tokens": count_tokens(truncated, cfg.tokenizer),
                "truncated": truncated != document,
            },
        )
        delta = await answer_from_document(truncated, query, cfg.task_inst, runtime)
        _exchange(recorder, delta)
        answer = delta.items[0]
        recorder.emit(TraceEvent.ANSWER, {"answer": answer, "rationale": None})
    return answer, recorder.trace


_RUNNERS = {Method.COMA: run_coma, Method.COA: run_coa, Method.TC: run_tc}


async def run_method(
    method: Method | str,
    query: str,
    document: str,
    cfg: RunConfig,
    backend: LlmBackend,
    *,
    trace_path: Path | None = None,
) -> RunResult:
    runner = _RUNNERS[Method(method)]
    return await runner(query, document, cfg, backend, trace_path=trace_path)


__all__ = ["RunResult", "run_coa", "run_coma", "run_method", "run_tc"]
