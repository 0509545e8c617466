"""Request, response and usage types for chat completions."""

from __future__ import annotations

import hashlib
import json
import threading
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field


class Role(str, Enum):
    PLANNER = "planner"
    EXTRACT = "extract"
    INFER = "infer"
    REFINE = "refine"
    MANAGER = "manager"
    COA_WORKER = "coa_worker"
    TC_DIRECT = "tc_direct"


class LlmRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: str = Field(min_length=1)
    system: str = ""
    user: str
    temperature: float = Field(default=0.0, ge=0.0)
    max_output_tokens: int = Field(default=8192, gt=0)
    role_tag: Role

    def fingerprint(self) -> str:
        """sha256 over (role_tag, model, user prompt)."""

        payload = json.dumps([self.role_tag.value, self.model, self.user], ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def chat_payload(self) -> dict[str, object]:
        messages = []
        if self.system:
            messages.append({"role": "system", "content": self.system})
        messages.append({"role": "user", "content": self.user})
        return {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        }


class LlmResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    prompt_tokens: int = Field(default=0, ge=0)
    completion_tokens: int = Field(default=0, ge=0)
    latency_ms: int = Field(default=0, ge=0)


class RoleUsage(BaseModel):
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0


class UsageLedger:
    """Per-role call and token counters; increments are atomic."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._usage: dict[Role, RoleUsage] = {}

    def record(self, role: Role, response: LlmResponse) -> None:
        with self._lock:
            usage = self._usage.setdefault(role, RoleUsage())
            usage.calls += 1
            usage.prompt_tokens += response.prompt_tokens
            usage.completion_tokens += response.completion_tokens

    def snapshot(self) -> dict[Role, RoleUsage]:
        with self._lock:
            return {role: usage.model_copy() for role, usage in self._usage.items()}

    @property
    def total_calls(self) -> int:
        with self._lock:
            return sum(usage.calls for usage in self._usage.values())

    @property
    def total_prompt_tokens(self) -> int:
        with self._lock:
            return sum(usage.prompt_tokens for usage in self._usage.values())

    @property
    def total_completion_tokens(self) -> int:
        with self._lock:
            return sum(usage.completion_tokens for usage in self._usage.values())


__all__ = ["LlmRequest", "LlmResponse", "Role", "RoleUsage", "UsageLedger"]
