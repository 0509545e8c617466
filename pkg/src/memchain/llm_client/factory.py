"""Construct LLM backends from settings."""

from __future__ import annotations

from pathlib import Path

import httpx

from ..config import MemchainSettings
from ..errors import ErrorCode, engine_error
from ..logging import get_logger
from .cassette import CassetteBackend
from .client import LlmBackend
from .http import HttpChatBackend
from .scripted import ScriptedBackend

logger = get_logger(__name__)


async def build_inner_backend(settings: MemchainSettings, kind: str | None = None) -> LlmBackend:
    """Build a live or scripted backend; ``kind`` defaults to ``settings.llm.backend``."""

    kind = kind or settings.llm.backend
    if kind == "scripted":
        if settings.llm.scripted_path is None:
            raise engine_error(ErrorCode.CONFIG, "Scripted backend needs llm.scripted_path")
        return ScriptedBackend.from_jsonl(
            settings.llm.scripted_path, tokenizer=settings.run.tokenizer
        )
    if kind != "http":
        raise engine_error(ErrorCode.CONFIG, "Unknown backend", details={"backend": kind})

    if settings.llm_api_key is None or not settings.llm_base_url:
        raise engine_error(
            ErrorCode.CONFIG,
            "HTTP backend needs LLM_API_KEY and LLM_BASE_URL",
            details={
                "has_api_key": settings.llm_api_key is not None,
                "has_base_url": bool(settings.llm_base_url),
            },
        )
    try:
        httpx.URL(settings.llm_base_url)
    except httpx.InvalidURL as exc:
        raise engine_error(
            ErrorCode.CONFIG, "Malformed LLM_BASE_URL", details={"url": settings.llm_base_url}
        ) from exc

    backend = HttpChatBackend(
        base_url=settings.llm_base_url,
        api_key=settings.llm_api_key.get_secret_value(),
        timeout_seconds=settings.llm.timeout_seconds,
        max_retries=settings.llm.max_retries,
        backoff_factor=settings.llm.retry_backoff_factor,
        backoff_max=settings.llm.retry_backoff_max,
    )
    if settings.llm.eager_check:
        try:
            await backend.check()
        except Exception:
            await backend.aclose()
            raise
        logger.info("llm_endpoint_ready", base_url=settings.llm_base_url)
    return backend


async def build_backend(
    settings: MemchainSettings,
    *,
    cassette_path: Path | None = None,
    inner: LlmBackend | None = None,
) -> LlmBackend:
    """Build the backend named by ``settings.llm.backend``.

    For cassettes ``cassette_path`` overrides ``llm.cassette_path``; a recording cassette
    wraps ``inner`` when given, otherwise a fresh ``llm.cassette_inner`` backend.
    """

    if settings.llm.backend != "cassette":
        return await build_inner_backend(settings)

    path = cassette_path or settings.llm.cassette_path
    if path is None:
        raise engine_error(ErrorCode.CONFIG, "Cassette backend needs llm.cassette_path")
    if settings.llm.cassette_mode == "replay":
        return CassetteBackend(path, "replay")
    if inner is None:
        inner = await build_inner_backend(settings, settings.llm.cassette_inner)
    return CassetteBackend(path, "record", inner=inner)


__all__ = ["build_backend", "build_inner_backend"]
