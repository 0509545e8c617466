"""Planner, worker phase and manager drivers for the structured-memory pipeline.

Each driver renders its prompt, calls the backend, parses the reply into a delta and
re-asks up to ``parse_retry_max`` times when the reply cannot be parsed. When every
attempt fails it returns a fallback delta that leaves memory as it was.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

from ..chunking import Chunk
from ..errors import EngineException, ErrorCode, engine_error
from ..llm_client import LlmRequest, Role, complete
from ..logging import get_logger
from ..memory import (
    ANSWER_KEY,
    GATHERED_KEY,
    INFERRED_KEY,
    QUESTIONS_KEY,
    Memory,
    normalize_entry,
    parse_memory_delta,
    serialize_memory,
)
from .models import AgentDelta, AgentRuntime, DeltaKind, LlmExchange
from .templates import TASK_SLOT, PromptName

logger = get_logger(__name__)

RATIONALE_KEY = "rationale"
CORRECTIVE_LINE = "Your previous reply was not parseable; respond with the keys only"

Parsed = dict[str, list[str]]
Accept = Callable[[Parsed], bool]


def _always(_: Parsed) -> bool:
    return True


class _Call:
    """Accumulates the attempts of one agent call into an :class:`LlmExchange`."""

    def __init__(self, role: Role, model: str, chunk_index: int | None) -> None:
        self.role = role
        self.model = model
        self.chunk_index = chunk_index
        self.fingerprints: list[str] = []
        self.replies: list[str] = []
        self.prompt_tokens = 0
        self.completion_tokens = 0
        self.latency_ms = 0

    def exchange(self) -> LlmExchange:
        return LlmExchange(
            role=self.role,
            model=self.model,
            chunk_index=self.chunk_index,
            fingerprints=tuple(self.fingerprints),
            replies=tuple(self.replies),
            prompt_tokens=self.prompt_tokens,
            completion_tokens=self.completion_tokens,
            latency_ms=self.latency_ms,
        )


async def _send(runtime: AgentRuntime, call: _Call, user: str) -> str:
    request = LlmRequest(
        model=call.model,
        user=user,
        temperature=runtime.temperature,
        max_output_tokens=runtime.max_output_tokens,
        role_tag=call.role,
    )
    response = await complete(request, runtime.backend, ledger=runtime.ledger)
    call.fingerprints.append(request.fingerprint())
    call.replies.append(response.text)
    call.prompt_tokens += response.prompt_tokens
    call.completion_tokens += response.completion_tokens
    call.latency_ms += response.latency_ms
    return response.text


async def _ask(
    runtime: AgentRuntime,
    role: Role,
    prompt: str,
    keys: Iterable[str],
    *,
    chunk_index: int | None = None,
    accept: Accept = _always,
) -> tuple[Parsed | None, _Call]:
    keys = tuple(keys)
    call = _Call(role, runtime.model_for(role), chunk_index)
    for attempt in range(runtime.parse_retry_max + 1):
        user = prompt if attempt == 0 else f"{prompt}\n\n{CORRECTIVE_LINE}: {', '.join(keys)}."
        reply = await _send(runtime, call, user)
        try:
            parsed = parse_memory_delta(reply, keys)
        except EngineException as exc:
            if exc.code != ErrorCode.PARSE_FAILURE:
                raise
            parsed = None
        if parsed is not None and accept(parsed):
            return parsed, call
        logger.warning("parse_retry", role=role.value, attempt=attempt, chunk=chunk_index)
    return None, call


def _fallback(kind: DeltaKind, call: _Call, items: Iterable[str] = ()) -> AgentDelta:
    logger.warning("agent_fallback", role=call.role.value, chunk=call.chunk_index)
    return AgentDelta(
        kind=kind,
        items=tuple(items),
        raw=call.replies[-1] if call.replies else "",
        fallback=True,
        exchange=call.exchange(),
    )


def _has_items(key: str) -> Accept:
    def accept(parsed: Parsed) -> bool:
        return any(normalize_entry(item) for item in parsed.get(key, []))

    return accept


def _cap(items: Iterable[str], cap: int) -> tuple[str, ...]:
    seen: set[str] = set()
    kept: list[str] = []
    for item in items:
        text = normalize_entry(item)
        if text and text not in seen:
            seen.add(text)
            kept.append(text)
    return tuple(kept[:cap])


async def plan(query: str, runtime: AgentRuntime) -> AgentDelta:
    """Seed the question list; falls back to the query itself as the only question."""

    if not query.strip():
        raise engine_error(ErrorCode.VALIDATION, "Query must be non-empty")
    prompt = runtime.template(PromptName.PLANNER).render(query=query)
    parsed, call = await _ask(
        runtime, Role.PLANNER, prompt, (QUESTIONS_KEY,), accept=_has_items(QUESTIONS_KEY)
    )
    if parsed is None:
        return _fallback(DeltaKind.QUESTIONS, call, (normalize_entry(query),))
    return AgentDelta(
        kind=DeltaKind.QUESTIONS,
        items=_cap(parsed[QUESTIONS_KEY], runtime.question_cap),
        raw=call.replies[-1],
        exchange=call.exchange(),
    )


async def extract(chunk: Chunk, memory: Memory, query: str, runtime: AgentRuntime) -> AgentDelta:
    prompt = runtime.template(PromptName.EXTRACT).render(
        query=query, chunk=chunk.text, memory=serialize_memory(memory)
    )
    parsed, call = await _ask(
        runtime, Role.EXTRACT, prompt, (GATHERED_KEY,), chunk_index=chunk.index
    )
    if parsed is None:
        return _fallback(DeltaKind.GATHERED, call)
    return AgentDelta(
        kind=DeltaKind.GATHERED,
        items=tuple(parsed[GATHERED_KEY]),
        raw=call.replies[-1],
        exchange=call.exchange(),
    )


async def infer(
    memory: Memory, query: str, runtime: AgentRuntime, *, chunk_index: int | None = None
) -> AgentDelta:
    prompt = runtime.template(PromptName.INFER).render(
        query=query, memory=serialize_memory(memory)
    )
    parsed, call = await _ask(
        runtime, Role.INFER, prompt, (INFERRED_KEY,), chunk_index=chunk_index
    )
    if parsed is None:
        return _fallback(DeltaKind.INFERRED, call)
    return AgentDelta(
        kind=DeltaKind.INFERRED,
        items=tuple(parsed[INFERRED_KEY]),
        raw=call.replies[-1],
        exchange=call.exchange(),
    )


async def refine(
    memory: Memory, query: str, runtime: AgentRuntime, *, chunk_index: int | None = None
) -> AgentDelta:
    """The returned items replace the question list; on failure they are the current list."""

    prompt = runtime.template(PromptName.REFINE).render(
        query=query, memory=serialize_memory(memory)
    )
    parsed, call = await _ask(
        runtime, Role.REFINE, prompt, (QUESTIONS_KEY,), chunk_index=chunk_index
    )
    if parsed is None:
        return _fallback(DeltaKind.QUESTIONS, call, memory.question_texts)
    return AgentDelta(
        kind=DeltaKind.QUESTIONS,
        items=_cap(parsed[QUESTIONS_KEY], runtime.question_cap),
        raw=call.replies[-1],
        exchange=call.exchange(),
    )


def _first(parsed: Mapping[str, list[str]], key: str) -> str:
    values = parsed.get(key) or [""]
    return values[0].strip()


async def synthesize(
    memory: Memory, query: str, task_inst: str, runtime: AgentRuntime
) -> AgentDelta:
    """Ask the manager for the final answer; its items hold exactly that answer."""

    prompt = runtime.template(PromptName.MANAGER).render(
        query=query, memory=serialize_memory(memory), **{TASK_SLOT: task_inst}
    )
    parsed, call = await _ask(
        runtime,
        Role.MANAGER,
        prompt,
        (ANSWER_KEY, QUESTIONS_KEY, RATIONALE_KEY),
        accept=lambda parsed: bool(_first(parsed, ANSWER_KEY)),
    )
    if parsed is None:
        raw = call.replies[-1] if call.replies else ""
        return _fallback(DeltaKind.ANSWER, call, (raw.strip(),))
    return AgentDelta(
        kind=DeltaKind.ANSWER,
        items=(_first(parsed, ANSWER_KEY),),
        raw=call.replies[-1],
        rationale=_first(parsed, RATIONALE_KEY) or None,
        exchange=call.exchange(),
    )


async def summarize_chunk(
    chunk: Chunk, summary: str, query: str, runtime: AgentRuntime
) -> AgentDelta:
    """Rolling-summary worker step; the reply is taken as free text."""

    prompt = runtime.template(PromptName.COA_WORKER).render(
        query=query, summary=summary, chunk=chunk.text
    )
    call = _Call(Role.COA_WORKER, runtime.model_for(Role.COA_WORKER), chunk.index)
    reply = await _send(runtime, call, prompt)
    return AgentDelta(
        kind=DeltaKind.SUMMARY,
        items=(reply.strip(),),
        raw=reply,
        exchange=call.exchange(),
    )


async def answer_from_summary(
    summary: str, query: str, task_inst: str, runtime: AgentRuntime
) -> AgentDelta:
    prompt = runtime.template(PromptName.COA_MANAGER).render(
        query=query, summary=summary, **{TASK_SLOT: task_inst}
    )
    call = _Call(Role.MANAGER, runtime.model_for(Role.MANAGER), None)
    reply = await _send(runtime, call, prompt)
    return AgentDelta(
        kind=DeltaKind.ANSWER, items=(reply.strip(),), raw=reply, exchange=call.exchange()
    )


async def answer_from_document(
    document: str, query: str, task_inst: str, runtime: AgentRuntime
) -> AgentDelta:
    prompt = runtime.template(PromptName.TC_DIRECT).render(
        query=query, document=document, **{TASK_SLOT: task_inst}
    )
    call = _Call(Role.TC_DIRECT, runtime.model_for(Role.TC_DIRECT), None)
    reply = await _send(runtime, call, prompt)
    return AgentDelta(
        kind=DeltaKind.ANSWER, items=(reply.strip(),), raw=reply, exchange=call.exchange()
    )


__all__ = [
    "CORRECTIVE_LINE",
    "answer_from_document",
    "answer_from_summary",
    "extract",
    "infer",
    "plan",
    "refine",
    "summarize_chunk",
    "synthesize",
]
