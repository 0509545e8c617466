"""Error definitions shared by every layer of the engine."""

from __future__ import annotations

from enum import Enum
from typing import Any, Mapping

from pydantic import BaseModel, Field


class ErrorCode(str, Enum):
    CONFIG = "CONFIG"
    VALIDATION = "VALIDATION"
    TRANSPORT = "TRANSPORT"
    PROVIDER = "PROVIDER"
    AUTH = "AUTH"
    RATE_LIMIT = "RATE_LIMIT"
    CASSETTE_MISMATCH = "CASSETTE_MISMATCH"
    SCRIPT_EXHAUSTED = "SCRIPT_EXHAUSTED"
    PARSE_FAILURE = "PARSE_FAILURE"
    DATASET = "DATASET"
    TRACE_INTEGRITY = "TRACE_INTEGRITY"
    TEMPLATE = "TEMPLATE"


class EngineError(BaseModel):
    """Typed error payload carried by :class:`EngineException`."""

    code: ErrorCode
    message: str
    details: Mapping[str, Any] | None = None
    retry_after: float | None = Field(default=None, description="Retry hint in seconds")

    def to_dict(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "code": self.code.value,
            "message": self.message,
        }
        if self.details:
            payload["details"] = dict(self.details)
        if self.retry_after is not None:
            payload["retry_after"] = self.retry_after
        return payload


class EngineException(RuntimeError):
    """Internal exception carrying an :class:`EngineError` payload."""

    def __init__(self, error: EngineError):
        super().__init__(error.message)
        self.error = error

    @property
    def code(self) -> ErrorCode:
        return self.error.code

    @property
    def retryable(self) -> bool:
        if self.error.code in (ErrorCode.TRANSPORT, ErrorCode.RATE_LIMIT):
            return True
        if self.error.code == ErrorCode.PROVIDER:
            status = (self.error.details or {}).get("status")
            return isinstance(status, int) and status >= 500
        return False


def engine_error(
    code: ErrorCode,
    message: str,
    *,
    details: Mapping[str, Any] | None = None,
    retry_after: float | None = None,
) -> EngineException:
    """Build an exception ready to raise."""

    return EngineException(
        EngineError(code=code, message=message, details=details, retry_after=retry_after)
    )


__all__ = ["ErrorCode", "EngineError", "EngineException", "engine_error"]
