"""Backend protocol and the single completion entry point used by agents."""

from __future__ import annotations

from typing import Protocol, runtime_checkable

from ..logging import get_logger
from .models import LlmRequest, LlmResponse, UsageLedger

logger = get_logger(__name__)


@runtime_checkable
class LlmBackend(Protocol):
    name: str

    async def complete(self, request: LlmRequest) -> LlmResponse: ...

    async def aclose(self) -> None: ...


async def complete(
    request: LlmRequest,
    backend: LlmBackend,
    *,
    ledger: UsageLedger | None = None,
) -> LlmResponse:
    """Send ``request`` and count the call against ``ledger``.

    Transport retries happen inside the backend; whatever escapes is fatal for the run.
    """

    response = await backend.complete(request)
    if ledger is not None:
        ledger.record(request.role_tag, response)
    logger.debug(
        "llm_call",
        backend=backend.name,
        role=request.role_tag.value,
        model=request.model,
        prompt_tokens=response.prompt_tokens,
        completion_tokens=response.completion_tokens,
        latency_ms=response.latency_ms,
    )
    return response


__all__ = ["LlmBackend", "complete"]
