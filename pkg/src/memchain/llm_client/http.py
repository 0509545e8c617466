"""Async chat-completion backend over HTTP with retry and backoff."""

from __future__ import annotations

import asyncio
import json
import random
import time
from typing import Any

import httpx

from ..errors import EngineException, ErrorCode, engine_error
from ..logging import get_logger
from .models import LlmRequest, LlmResponse

logger = get_logger(__name__)

COMPLETIONS_PATH = "/chat/completions"
MODELS_PATH = "/models"


class BackoffStrategy:
    def __init__(self, factor: float, maximum: float) -> None:
        self.factor = factor
        self.maximum = maximum

    def delay(self, attempt: int) -> float:
        delay = min(self.maximum, (2**attempt) * self.factor)
        jitter = random.random() * 0.1 * delay
        return delay + jitter

    async def sleep(self, attempt: int) -> None:
        await asyncio.sleep(self.delay(attempt))


class HttpChatBackend:
    """POSTs OpenAI-style chat requests; transient failures are retried transparently."""

    name = "http"

    def __init__(
        self,
        *,
        base_url: str,
        api_key: str,
        timeout_seconds: float = 120.0,
        max_retries: int = 5,
        backoff_factor: float = 0.5,
        backoff_max: float = 30.0,
        transport: httpx.AsyncBaseTransport | None = None,
    ) -> None:
        self.max_retries = max_retries
        self._client = httpx.AsyncClient(
            base_url=base_url,
            timeout=httpx.Timeout(timeout_seconds),
            headers={
                "Accept": "application/json",
                "Authorization": f"Bearer {api_key}",
            },
            transport=transport,
        )
        self._backoff = BackoffStrategy(factor=backoff_factor, maximum=backoff_max)

    async def aclose(self) -> None:
        await self._client.aclose()

    async def __aenter__(self) -> "HttpChatBackend":
        return self

    async def __aexit__(self, *exc: Any) -> None:
        await self.aclose()

    async def check(self) -> None:
        """The endpoint must list models for this key."""

        try:
            response = await self._client.get(MODELS_PATH)
        except httpx.RequestError as exc:
            raise engine_error(
                ErrorCode.TRANSPORT, "Capability check failed", details={"error": str(exc)}
            ) from exc
        if not response.is_success:
            raise self._map_error(response)

    async def complete(self, request: LlmRequest) -> LlmResponse:
        payload = request.chat_payload()
        for attempt in range(self.max_retries + 1):
            started = time.monotonic()
            try:
                response = await self._client.post(COMPLETIONS_PATH, json=payload)
            except httpx.RequestError as exc:
                if attempt == self.max_retries:
                    raise engine_error(
                        ErrorCode.TRANSPORT,
                        "HTTP request failed",
                        details={"error": str(exc), "attempts": attempt + 1},
                    ) from exc
                logger.warning("llm_retry", attempt=attempt, reason="transport", error=str(exc))
                await self._backoff.sleep(attempt)
                continue

            if response.is_success:
                latency_ms = int((time.monotonic() - started) * 1000)
                return self._parse(response, latency_ms)

            error = self._map_error(response)
            if not error.retryable or attempt == self.max_retries:
                raise error
            logger.warning(
                "llm_retry", attempt=attempt, status=response.status_code, code=error.code.value
            )
            await self._respect_retry_after(error)
            await self._backoff.sleep(attempt)

        raise engine_error(ErrorCode.TRANSPORT, "Max retries exceeded")  # pragma: no cover

    def _parse(self, response: httpx.Response, latency_ms: int) -> LlmResponse:
        try:
            payload = response.json()
            text = payload["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise engine_error(
                ErrorCode.PROVIDER,
                "Malformed completion payload",
                details={"status": response.status_code, "body": response.text[:500]},
            ) from exc
        usage = payload.get("usage") or {}
        return LlmResponse(
            text=text or "",
            prompt_tokens=int(usage.get("prompt_tokens") or 0),
            completion_tokens=int(usage.get("completion_tokens") or 0),
            latency_ms=latency_ms,
        )

    async def _respect_retry_after(self, error: EngineException) -> None:
        if error.error.retry_after is not None:
            await asyncio.sleep(min(error.error.retry_after, self._backoff.maximum))

    def _map_error(self, response: httpx.Response) -> EngineException:
        retry_after = None
        if "Retry-After" in response.headers:
            try:
                retry_after = float(response.headers["Retry-After"])
            except ValueError:
                retry_after = None

        try:
            payload = response.json()
        except json.JSONDecodeError:
            payload = {"error": {"message": response.text}}
        err = payload.get("error") if isinstance(payload, dict) else None
        if not isinstance(err, dict):
            err = {"message": str(err or response.text)}

        details: dict[str, Any] = {"status": response.status_code}
        if err.get("type"):
            details["type"] = err["type"]
        if err.get("code") is not None:
            details["code"] = err["code"]

        return engine_error(
            self._classify_error(response.status_code),
            err.get("message") or "Provider error",
            details=details,
            retry_after=retry_after,
        )

    def _classify_error(self, status: int) -> ErrorCode:
        if status in (401, 403):
            return ErrorCode.AUTH
        if status == 429:
            return ErrorCode.RATE_LIMIT
        return ErrorCode.PROVIDER


__all__ = ["BackoffStrategy", "HttpChatBackend"]
