"""Record/replay cassettes: ordered request fingerprints with their responses."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ValidationError

from ..errors import ErrorCode, engine_error
from ..logging import get_logger
from .models import LlmRequest, LlmResponse, Role

logger = get_logger(__name__)

CassetteMode = Literal["record", "replay"]


class CassetteEntry(BaseModel):
    fingerprint: str
    role_tag: Role
    model: str
    response: LlmResponse


def load_cassette(path: Path) -> list[CassetteEntry]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise engine_error(
            ErrorCode.CONFIG, "Cannot read cassette", details={"path": str(path)}
        ) from exc
    entries: list[CassetteEntry] = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            entries.append(CassetteEntry.model_validate_json(line))
        except ValidationError as exc:
            raise engine_error(
                ErrorCode.CONFIG,
                "Malformed cassette entry",
                details={"path": str(path), "line": number},
            ) from exc
    return entries


class CassetteBackend:
    """Replays recorded responses in order, or records those of an inner backend."""

    name = "cassette"

    def __init__(
        self,
        path: Path,
        mode: CassetteMode = "replay",
        *,
        inner: object | None = None,
    ) -> None:
        self.path = path
        self.mode = mode
        self._inner = inner
        self._cursor = 0
        self._entries: list[CassetteEntry] = []
        if mode == "replay":
            self._entries = load_cassette(path)
        else:
            if inner is None:
                raise engine_error(
                    ErrorCode.CONFIG, "Recording a cassette requires an inner backend"
                )
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("", encoding="utf-8")

    async def complete(self, request: LlmRequest) -> LlmResponse:
        fingerprint = request.fingerprint()
        if self.mode == "replay":
            return self._replay(request, fingerprint)

        response: LlmResponse = await self._inner.complete(request)  # type: ignore[union-attr]
        entry = CassetteEntry(
            fingerprint=fingerprint,
            role_tag=request.role_tag,
            model=request.model,
            response=response,
        )
        self._entries.append(entry)
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(entry.model_dump_json() + "\n")
        return response

    def _replay(self, request: LlmRequest, fingerprint: str) -> LlmResponse:
        position = self._cursor
        if position >= len(self._entries):
            raise engine_error(
                ErrorCode.CASSETTE_MISMATCH,
                "Cassette exhausted",
                details={"path": str(self.path), "position": position},
            )
        entry = self._entries[position]
        if entry.fingerprint != fingerprint:
            raise engine_error(
                ErrorCode.CASSETTE_MISMATCH,
                "Request does not match the recorded fingerprint",
                details={
                    "path": str(self.path),
                    "position": position,
                    "expected_role": entry.role_tag.value,
                    "actual_role": request.role_tag.value,
                },
            )
        self._cursor += 1
        return entry.response

    async def aclose(self) -> None:
        if self.mode == "replay" and self._cursor < len(self._entries):
            logger.warning(
                "cassette_not_exhausted",
                path=str(self.path),
                used=self._cursor,
                recorded=len(self._entries),
            )


__all__ = ["CassetteBackend", "CassetteEntry", "CassetteMode", "load_cassette"]
