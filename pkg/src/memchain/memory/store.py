"""Pure operations over :class:`Memory` snapshots; each returns a new value."""

from __future__ import annotations

from typing import Iterable, Sequence

from ..chunking import DEFAULT_TOKENIZER, count_tokens
from .models import Fact, Memory, MemoryBudget, Question, QuestionOrigin


def normalize_entry(text: str) -> str:
    """Collapse whitespace; the dedup key for questions and facts."""

    return " ".join(text.split())


def _fresh(texts: Iterable[str], seen: set[str]) -> list[str]:
    fresh: list[str] = []
    for raw in texts:
        text = normalize_entry(raw)
        if text and text not in seen:
            seen.add(text)
            fresh.append(text)
    return fresh


def make_questions(
    texts: Sequence[str],
    origin: QuestionOrigin,
    *,
    start_seq: int = 0,
    cap: int | None = None,
) -> list[Question]:
    unique = _fresh(texts, set())
    if cap is not None:
        unique = unique[:cap]
    return [
        Question(text=text, origin=origin, seq=start_seq + offset)
        for offset, text in enumerate(unique)
    ]


def new_memory(questions: Sequence[Question] = ()) -> Memory:
    next_seq = max((question.seq for question in questions), default=-1) + 1
    return Memory(questions=tuple(questions), next_seq=next_seq)


def append_gathered(
    memory: Memory,
    facts: Sequence[str],
    source_chunk: int,
    tokenizer: str = DEFAULT_TOKENIZER,
) -> Memory:
    fresh = _fresh(facts, set(memory.gathered_texts))
    if not fresh:
        return memory
    seq = memory.next_seq
    added = tuple(
        Fact(
            text=text,
            source_chunk=source_chunk,
            seq=seq + offset,
            tokens=count_tokens(text, tokenizer),
        )
        for offset, text in enumerate(fresh)
    )
    return memory.model_copy(
        update={"gathered": memory.gathered + added, "next_seq": seq + len(added)}
    )


def append_inferred(
    memory: Memory,
    facts: Sequence[str],
    tokenizer: str = DEFAULT_TOKENIZER,
    *,
    cap: int | None = None,
) -> Memory:
    fresh = _fresh(facts, set(memory.inferred_texts))
    if not fresh:
        return memory
    seq = memory.next_seq
    added = tuple(
        Fact(text=text, source_chunk=-1, seq=seq + offset, tokens=count_tokens(text, tokenizer))
        for offset, text in enumerate(fresh)
    )
    inferred = memory.inferred + added
    if cap is not None and len(inferred) > cap:
        inferred = inferred[len(inferred) - cap :]
    return memory.model_copy(update={"inferred": inferred, "next_seq": seq + len(added)})


def replace_questions(
    memory: Memory,
    questions: Sequence[str],
    *,
    origin: QuestionOrigin = QuestionOrigin.REFINE,
    cap: int | None = None,
) -> Memory:
    """Swap the whole question list; texts already present keep their origin and seq."""

    existing = {question.text: question for question in memory.questions}
    texts = _fresh(questions, set())
    if cap is not None:
        texts = texts[:cap]
    seq = memory.next_seq
    replaced: list[Question] = []
    for text in texts:
        kept = existing.get(text)
        if kept is None:
            kept = Question(text=text, origin=origin, seq=seq)
            seq += 1
        replaced.append(kept)
    return memory.model_copy(update={"questions": tuple(replaced), "next_seq": seq})


def prune(memory: Memory, budget: MemoryBudget) -> Memory:
    """Evict whole gathered facts oldest-first until the rest fits the budget.

    Survivors are the longest suffix of ``gathered`` within ``budget.max_tokens``. A
    newest fact that alone exceeds the budget survives by itself.
    """

    kept: list[Fact] = []
    total = 0
    for fact in reversed(memory.gathered):
        if total + fact.tokens > budget.max_tokens:
            break
        kept.append(fact)
        total += fact.tokens
    if not kept and memory.gathered:
        kept.append(memory.gathered[-1])
    if len(kept) == len(memory.gathered):
        return memory
    return memory.model_copy(update={"gathered": tuple(reversed(kept))})


def with_answer(memory: Memory, answer: str) -> Memory:
    return memory.model_copy(update={"answer": answer})


__all__ = [
    "append_gathered",
    "append_inferred",
    "make_questions",
    "new_memory",
    "normalize_entry",
    "prune",
    "replace_questions",
    "with_answer",
]
