"""Deterministic backend that plays back a prepared response queue."""

from __future__ import annotations

import json
from collections import deque
from pathlib import Path
from typing import Callable, Iterable

from ..chunking import DEFAULT_TOKENIZER, count_tokens
from ..errors import ErrorCode, engine_error
from .models import LlmRequest, LlmResponse

Responder = Callable[[LlmRequest], str]


class ScriptedBackend:
    """Returns queued replies in order, then defers to ``responder`` if one is given.

    Token usage is computed with a registered tokenizer so counters stay exact and
    reproducible.
    """

    name = "scripted"

    def __init__(
        self,
        replies: Iterable[str | LlmResponse] = (),
        *,
        responder: Responder | None = None,
        tokenizer: str = DEFAULT_TOKENIZER,
    ) -> None:
        self._queue: deque[str | LlmResponse] = deque(replies)
        self._responder = responder
        self._tokenizer = tokenizer
        self.requests: list[LlmRequest] = []

    @classmethod
    def from_jsonl(cls, path: Path, *, tokenizer: str = DEFAULT_TOKENIZER) -> "ScriptedBackend":
        """Each line is a JSON string or an object with a ``text`` field."""

        replies: list[str] = []
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise engine_error(
                ErrorCode.CONFIG, "Cannot read scripted replies", details={"path": str(path)}
            ) from exc
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
            except json.JSONDecodeError as exc:
                raise engine_error(
                    ErrorCode.CONFIG,
                    "Malformed scripted reply line",
                    details={"path": str(path), "line": number},
                ) from exc
            replies.append(item if isinstance(item, str) else str(item.get("text", "")))
        return cls(replies, tokenizer=tokenizer)

    @property
    def remaining(self) -> int:
        return len(self._queue)

    def extend(self, replies: Iterable[str | LlmResponse]) -> None:
        self._queue.extend(replies)

    async def complete(self, request: LlmRequest) -> LlmResponse:
        self.requests.append(request)
        if self._queue:
            item = self._queue.popleft()
        elif self._responder is not None:
            item = self._responder(request)
        else:
            raise engine_error(
                ErrorCode.SCRIPT_EXHAUSTED,
                "Scripted backend has no reply left",
                details={"role": request.role_tag.value, "served": len(self.requests) - 1},
            )
        if isinstance(item, LlmResponse):
            return item
        prompt = f"{request.system}\n{request.user}" if request.system else request.user
        return LlmResponse(
            text=item,
            prompt_tokens=count_tokens(prompt, self._tokenizer),
            completion_tokens=count_tokens(item, self._tokenizer),
            latency_ms=0,
        )

    async def aclose(self) -> None:
        return None


__all__ = ["Responder", "ScriptedBackend"]
