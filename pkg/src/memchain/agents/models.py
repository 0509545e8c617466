"""Agent runtime context and the records agent calls produce."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

from pydantic import BaseModel, ConfigDict, Field

from ..llm_client import LlmBackend, Role, UsageLedger
from .templates import PromptName, PromptTemplate, load_template

FREE_FORM_TASK_INST = "Answer concisely."
MULTIPLE_CHOICE_TASK_INST = "Answer with the text of exactly one of the provided options."


class DeltaKind(str, Enum):
    QUESTIONS = "questions"
    GATHERED = "gathered"
    INFERRED = "inferred"
    ANSWER = "answer"
    SUMMARY = "summary"


class LlmExchange(BaseModel):
    """One agent call: every attempt's reply, with usage summed over attempts."""

    model_config = ConfigDict(frozen=True)

    role: Role
    model: str
    chunk_index: int | None = None
    fingerprints: tuple[str, ...] = ()
    replies: tuple[str, ...] = ()
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0

    @property
    def attempts(self) -> int:
        return len(self.replies)


class AgentDelta(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: DeltaKind
    items: tuple[str, ...] = ()
    raw: str = ""
    rationale: str | None = None
    fallback: bool = False
    exchange: LlmExchange

    @property
    def attempts(self) -> int:
        return self.exchange.attempts


@dataclass
class AgentRuntime:
    """Everything an agent driver needs besides the memory and the chunk."""

    backend: LlmBackend
    default_model: str
    models: Mapping[Role, str] = field(default_factory=dict)
    temperature: float = 0.0
    max_output_tokens: int = 8192
    parse_retry_max: int = 2
    question_cap: int = 25
    tokenizer: str = "rule"
    prompt_dir: Path | None = None
    ledger: UsageLedger = field(default_factory=UsageLedger)

    def model_for(self, role: Role) -> str:
        return self.models.get(role, self.default_model)

    def template(self, name: PromptName) -> PromptTemplate:
        return load_template(name, self.prompt_dir)


__all__ = [
    "AgentDelta",
    "AgentRuntime",
    "DeltaKind",
    "FREE_FORM_TASK_INST",
    "LlmExchange",
    "MULTIPLE_CHOICE_TASK_INST",
]
