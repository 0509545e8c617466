"""Application configuration loaded from flags, environment and a TOML file."""

from __future__ import annotations

from contextvars import ContextVar
from enum import Enum
from pathlib import Path
from typing import Any, Literal, Mapping

from pydantic import BaseModel, Field, SecretStr, field_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from .llm_client.models import Role

_CONFIG_FILE: ContextVar[Path | None] = ContextVar("memchain_config_file", default=None)


class Method(str, Enum):
    COMA = "coma"
    COA = "coa"
    TC = "tc"


class LlmSection(BaseModel):
    """Backend selection, model assignment and sampling settings."""

    backend: Literal["http", "scripted", "cassette"] = "http"
    default_model: str = Field(default="gpt-4.1-mini", description="Model used by unmapped roles")
    models: dict[Role, str] = Field(
        default_factory=dict,
        description="Per-role model overrides, e.g. {'extract': 'qwen3-14b'}",
    )
    temperature: float = Field(default=0.0, ge=0.0)
    max_output_tokens: int = Field(default=8192, gt=0)
    timeout_seconds: float = Field(default=120.0, ge=1.0, description="HTTP request timeout")
    max_retries: int = Field(default=5, ge=0, le=10, description="Transport retry attempts")
    retry_backoff_factor: float = Field(default=0.5, ge=0.0, description="Base backoff in seconds")
    retry_backoff_max: float = Field(default=30.0, ge=0.0, description="Maximum backoff in seconds")
    eager_check: bool = Field(default=False, description="Check the endpoint when building it")
    cassette_path: Path | None = Field(
        default=None,
        description="Cassette file for single runs, cassette directory for bench sweeps",
    )
    cassette_mode: Literal["record", "replay"] = "replay"
    cassette_inner: Literal["http", "scripted"] = Field(
        default="http", description="Backend wrapped by a recording cassette"
    )
    scripted_path: Path | None = Field(default=None, description="JSON-lines response queue")


class RunSection(BaseModel):
    """Pipeline sizing and agent behaviour."""

    method: Method = Method.COMA
    chunk_size: int = Field(default=64000, gt=0)
    memory_budget_tokens: int | None = Field(default=8000, gt=0)
    k_fraction: float | None = Field(
        default=None,
        gt=0.0,
        le=1.0,
        description="Budget as a fraction of chunk_size; wins over memory_budget_tokens when set",
    )
    tc_limit: int = Field(default=128000, gt=0)
    tokenizer: str = "rule"
    parse_retry_max: int = Field(default=2, ge=0, le=10)
    question_cap: int = Field(default=25, ge=1)
    inferred_cap: int | None = Field(default=None, ge=1)
    task_inst: str | None = Field(default=None, description="Overrides the per-task instruction")
    prompt_dir: Path | None = Field(default=None, description="Directory of <role>.txt overrides")
    output_dir: Path = Path("runs")
    log_level: str = "INFO"


class BenchSection(BaseModel):
    parallelism: int = Field(default=1, ge=1, le=64)
    seed: int | None = None
    min_context_tokens: int = Field(default=0, ge=0)
    skip_bad: bool = False
    profile: str | None = None
    metric: Literal["rouge_l", "rouge_1", "em"] | None = Field(
        default=None, description="Primary score; the profile's metric when unset"
    )


class MemchainSettings(BaseSettings):
    """Configuration for the engine and its command-line surface."""

    model_config = SettingsConfigDict(
        env_prefix="MEMCHAIN_",
        env_nested_delimiter="__",
        extra="ignore",
    )

    llm_api_key: SecretStr | None = Field(
        default=None,
        validation_alias="llm_api_key",
        description="Bearer token for the HTTP backend (env LLM_API_KEY)",
    )
    llm_base_url: str | None = Field(
        default=None,
        validation_alias="llm_base_url",
        description="Base URL of the chat completion endpoint (env LLM_BASE_URL)",
    )
    llm: LlmSection = Field(default_factory=LlmSection)
    run: RunSection = Field(default_factory=RunSection)
    bench: BenchSection = Field(default_factory=BenchSection)

    @field_validator("llm_base_url")
    def _validate_base_url(cls, value: str | None) -> str | None:
        if value is None:
            return value
        if not value.startswith(("http://", "https://")):
            msg = "LLM base URL must start with http:// or https://"
            raise ValueError(msg)
        return value.rstrip("/")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        sources: list[PydanticBaseSettingsSource] = [init_settings, env_settings]
        config_file = _CONFIG_FILE.get()
        if config_file is not None:
            sources.append(TomlConfigSettingsSource(settings_cls, toml_file=config_file))
        return tuple(sources)

    def masked(self) -> dict[str, Any]:
        """Return the effective configuration with secrets hidden."""

        payload = self.model_dump(mode="json")
        if self.llm_api_key is not None:
            payload["llm_api_key"] = "***"
        return payload


def load_settings(
    config_file: Path | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> MemchainSettings:
    """Build settings with precedence overrides > env > config file > defaults."""

    token = _CONFIG_FILE.set(config_file)
    try:
        return MemchainSettings(**dict(overrides or {}))
    finally:
        _CONFIG_FILE.reset(token)


__all__ = [
    "BenchSection",
    "LlmSection",
    "MemchainSettings",
    "Method",
    "RunSection",
    "load_settings",
]
