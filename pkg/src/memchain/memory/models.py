"""Value types of the centralized structured memory."""

from __future__ import annotations

import hashlib
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..errors import ErrorCode, engine_error


class QuestionOrigin(str, Enum):
    PLANNER = "planner"
    REFINE = "refine"


class Question(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str = Field(min_length=1)
    origin: QuestionOrigin
    seq: int = Field(ge=0)


class Fact(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str = Field(min_length=1)
    source_chunk: int = Field(default=-1, ge=-1, description="-1 when no chunk provenance")
    seq: int = Field(ge=0)
    tokens: int = Field(ge=0)


class Memory(BaseModel):
    """Immutable snapshot of ⟨questions, gathered facts, inferred facts, answer⟩."""

    model_config = ConfigDict(frozen=True)

    questions: tuple[Question, ...] = ()
    gathered: tuple[Fact, ...] = ()
    inferred: tuple[Fact, ...] = ()
    answer: str = ""
    next_seq: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_seq_counter(self) -> "Memory":
        used = [q.seq for q in self.questions] + [f.seq for f in (*self.gathered, *self.inferred)]
        if used and max(used) >= self.next_seq:
            raise ValueError("next_seq must exceed every assigned seq")
        return self

    @property
    def gathered_tokens(self) -> int:
        return sum(fact.tokens for fact in self.gathered)

    @property
    def question_texts(self) -> list[str]:
        return [question.text for question in self.questions]

    @property
    def gathered_texts(self) -> list[str]:
        return [fact.text for fact in self.gathered]

    @property
    def inferred_texts(self) -> list[str]:
        return [fact.text for fact in self.inferred]

    def digest(self) -> str:
        """sha256 of the canonical serialization."""

        from .codec import serialize_memory

        return hashlib.sha256(serialize_memory(self).encode("utf-8")).hexdigest()


class MemoryBudget(BaseModel):
    """Cap on the total tokens of gathered facts, as a fraction of the chunk size."""

    model_config = ConfigDict(frozen=True)

    max_tokens: int = Field(gt=0)
    k_fraction: float = Field(gt=0.0)

    @field_validator("k_fraction")
    def _validate_fraction(cls, value: float) -> float:
        if value > 1.0:
            msg = "k_fraction cannot exceed 1"
            raise ValueError(msg)
        return value

    @classmethod
    def from_fraction(cls, k_fraction: float, chunk_size: int) -> "MemoryBudget":
        max_tokens = round(k_fraction * chunk_size)
        if max_tokens <= 0:
            raise engine_error(
                ErrorCode.VALIDATION,
                "Memory budget rounds to zero tokens",
                details={"k_fraction": k_fraction, "chunk_size": chunk_size},
            )
        return cls(max_tokens=max_tokens, k_fraction=k_fraction)

    @classmethod
    def from_tokens(cls, max_tokens: int, chunk_size: int) -> "MemoryBudget":
        if max_tokens <= 0 or chunk_size <= 0 or max_tokens > chunk_size:
            raise engine_error(
                ErrorCode.VALIDATION,
                "Memory budget must be positive and within the chunk size",
                details={"max_tokens": max_tokens, "chunk_size": chunk_size},
            )
        return cls(max_tokens=max_tokens, k_fraction=max_tokens / chunk_size)


__all__ = ["Fact", "Memory", "MemoryBudget", "Question", "QuestionOrigin"]
