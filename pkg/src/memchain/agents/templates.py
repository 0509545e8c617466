"""Prompt templates shipped as package data, with per-run directory overrides.

Templates use ``{{name}}`` placeholders plus the single-brace ``{TASK_SPECIFIC_INST}``
slot of the manager prompts. Leading lines starting with ``%%`` are comments and are
dropped before rendering.
"""

from __future__ import annotations

import re
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from pydantic import BaseModel, ConfigDict

from ..errors import ErrorCode, engine_error
from ..logging import get_logger

logger = get_logger(__name__)

TASK_SLOT = "TASK_SPECIFIC_INST"
_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}|\{(" + TASK_SLOT + r")\}")
_COMMENT_PREFIX = "%%"


class PromptName(str, Enum):
    PLANNER = "planner"
    EXTRACT = "extract"
    INFER = "infer"
    REFINE = "refine"
    MANAGER = "manager"
    COA_WORKER = "coa_worker"
    COA_MANAGER = "coa_manager"
    TC_DIRECT = "tc_direct"


class PromptTemplate(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: PromptName
    body: str

    @property
    def placeholders(self) -> frozenset[str]:
        found = _PLACEHOLDER.finditer(self.body)
        return frozenset(match.group(1) or match.group(2) for match in found)

    def render(self, **values: str) -> str:
        """Substitute every placeholder in one pass.

        Values are inserted literally, so a document or memory that itself contains
        ``{{...}}`` is never expanded a second time.
        """

        missing = sorted(self.placeholders - values.keys())
        if missing:
            raise engine_error(
                ErrorCode.TEMPLATE,
                "Unbound prompt placeholders",
                details={"template": self.name.value, "missing": missing},
            )
        return _PLACEHOLDER.sub(lambda match: values[match.group(1) or match.group(2)], self.body)


def _strip_comments(text: str) -> str:
    lines = text.splitlines(keepends=True)
    while lines and lines[0].startswith(_COMMENT_PREFIX):
        lines.pop(0)
    return "".join(lines)


def shipped_prompt_bytes(name: PromptName) -> bytes:
    return resources.files("memchain.agents").joinpath("prompts", f"{name.value}.txt").read_bytes()


@lru_cache(maxsize=None)
def _shipped(name: PromptName) -> PromptTemplate:
    body = shipped_prompt_bytes(name).decode("utf-8")
    return PromptTemplate(name=name, body=_strip_comments(body))


def load_template(name: PromptName, prompt_dir: Path | None = None) -> PromptTemplate:
    """Return ``prompt_dir/<name>.txt`` when it exists, else the shipped prompt."""

    if prompt_dir is not None:
        override = prompt_dir / f"{name.value}.txt"
        if override.is_file():
            logger.debug("prompt_override", template=name.value, path=str(override))
            body = override.read_text(encoding="utf-8")
            return PromptTemplate(name=name, body=_strip_comments(body))
    return _shipped(name)


__all__ = [
    "PromptName",
    "PromptTemplate",
    "TASK_SLOT",
    "load_template",
    "shipped_prompt_bytes",
]
