"""Per-run configuration derived from settings."""

from __future__ import annotations

from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..agents import FREE_FORM_TASK_INST, AgentRuntime
from ..chunking import DEFAULT_TOKENIZER, get_tokenizer
from ..config import MemchainSettings, Method
from ..errors import ErrorCode, engine_error
from ..llm_client import LlmBackend, Role, UsageLedger
from ..memory import MemoryBudget

DEFAULT_CHUNK_SIZE = 64000
DEFAULT_BUDGET_TOKENS = 8000
DEFAULT_TC_LIMIT = 128000


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: Method = Method.COMA
    chunk_size: int = Field(default=DEFAULT_CHUNK_SIZE, gt=0)
    budget: MemoryBudget = Field(
        default_factory=lambda: MemoryBudget.from_tokens(DEFAULT_BUDGET_TOKENS, DEFAULT_CHUNK_SIZE)
    )
    tc_limit: int = Field(default=DEFAULT_TC_LIMIT, gt=0)
    default_model: str = "gpt-4.1-mini"
    models: dict[Role, str] = Field(default_factory=dict)
    temperature: float = Field(default=0.0, ge=0.0)
    max_output_tokens: int = Field(default=8192, gt=0)
    tokenizer: str = DEFAULT_TOKENIZER
    parse_retry_max: int = Field(default=2, ge=0)
    question_cap: int = Field(default=25, ge=1)
    inferred_cap: int | None = Field(default=None, ge=1)
    task_inst: str = FREE_FORM_TASK_INST
    prompt_dir: Path | None = None

    @model_validator(mode="after")
    def _check_budget(self) -> "RunConfig":
        if self.budget.max_tokens > self.chunk_size:
            raise engine_error(
                ErrorCode.VALIDATION,
                "Memory budget cannot exceed the chunk size",
                details={"budget": self.budget.max_tokens, "chunk_size": self.chunk_size},
            )
        return self

    @classmethod
    def from_settings(
        cls, settings: MemchainSettings, **overrides: Any
    ) -> "RunConfig":
        run = settings.run
        if run.k_fraction is not None:
            budget = MemoryBudget.from_fraction(run.k_fraction, run.chunk_size)
        else:
            budget = MemoryBudget.from_tokens(
                run.memory_budget_tokens or DEFAULT_BUDGET_TOKENS, run.chunk_size
            )
        get_tokenizer(run.tokenizer)
        values: dict[str, Any] = {
            "method": run.method,
            "chunk_size": run.chunk_size,
            "budget": budget,
            "tc_limit": run.tc_limit,
            "default_model": settings.llm.default_model,
            "models": dict(settings.llm.models),
            "temperature": settings.llm.temperature,
            "max_output_tokens": settings.llm.max_output_tokens,
            "tokenizer": run.tokenizer,
            "parse_retry_max": run.parse_retry_max,
            "question_cap": run.question_cap,
            "inferred_cap": run.inferred_cap,
            "prompt_dir": run.prompt_dir,
        }
        if run.task_inst is not None:
            values["task_inst"] = run.task_inst
        values.update(overrides)
        return cls(**values)

    def runtime(self, backend: LlmBackend, ledger: UsageLedger | None = None) -> AgentRuntime:
        return AgentRuntime(
            backend=backend,
            default_model=self.default_model,
            models=dict(self.models),
            temperature=self.temperature,
            max_output_tokens=self.max_output_tokens,
            parse_retry_max=self.parse_retry_max,
            question_cap=self.question_cap,
            tokenizer=self.tokenizer,
            prompt_dir=self.prompt_dir,
            ledger=ledger or UsageLedger(),
        )


def model_preset(default: str, **role_overrides: str) -> dict[Role, str]:
    """Per-role model map: every role gets ``default`` unless overridden by role name.

    ``model_preset("gpt-4.1-mini", extract="qwen3-14b")`` swaps the model of a single
    phase, the shape of a phase-substitution ablation.
    """

    unknown = sorted(set(role_overrides) - {role.value for role in Role})
    if unknown:
        raise engine_error(
            ErrorCode.CONFIG, "Unknown roles in model preset", details={"roles": unknown}
        )
    return {role: role_overrides.get(role.value, default) for role in Role}


def expected_calls(method: Method | str, chunks: int) -> int:
    method = Method(method)
    if method is Method.COMA:
        return 3 * chunks + 2
    if method is Method.COA:
        return chunks + 1
    return 1


__all__ = [
    "DEFAULT_BUDGET_TOKENS",
    "DEFAULT_CHUNK_SIZE",
    "DEFAULT_TC_LIMIT",
    "RunConfig",
    "expected_calls",
    "model_preset",
]
