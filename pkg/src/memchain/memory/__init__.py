"""Centralized structured memory, its pruning and its prompt serialization."""

from .codec import (
    ANSWER_KEY,
    GATHERED_KEY,
    INFERRED_KEY,
    MEMORY_KEYS,
    QUESTIONS_KEY,
    memory_lists,
    parse_memory_delta,
    serialize_memory,
)
from .models import Fact, Memory, MemoryBudget, Question, QuestionOrigin
from .store import (
    append_gathered,
    append_inferred,
    make_questions,
    new_memory,
    normalize_entry,
    prune,
    replace_questions,
    with_answer,
)

__all__ = [
    "ANSWER_KEY",
    "Fact",
    "GATHERED_KEY",
    "INFERRED_KEY",
    "MEMORY_KEYS",
    "Memory",
    "MemoryBudget",
    "QUESTIONS_KEY",
    "Question",
    "QuestionOrigin",
    "append_gathered",
    "append_inferred",
    "make_questions",
    "memory_lists",
    "new_memory",
    "normalize_entry",
    "parse_memory_delta",
    "prune",
    "replace_questions",
    "serialize_memory",
    "with_answer",
]
