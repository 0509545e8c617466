"""Text serialization of memory and defensive parsing of agent replies.

The serialized form is a four-key block document, always in this order::

    questions:
      - "..."
    gathered_facts: []
    inferred_facts: []
    answer: ""

Entries are double-quoted with JSON escaping, plus ``\\uXXXX`` escapes for the code
points YAML treats as line breaks or non-printable, so every entry reads back as
the exact same string.
"""

from __future__ import annotations

import json
import re
from typing import Any, Iterable, Mapping

import yaml

from ..errors import ErrorCode, engine_error
from .models import Memory

QUESTIONS_KEY = "questions"
GATHERED_KEY = "gathered_facts"
INFERRED_KEY = "inferred_facts"
ANSWER_KEY = "answer"
MEMORY_KEYS = (QUESTIONS_KEY, GATHERED_KEY, INFERRED_KEY, ANSWER_KEY)

_YAML_UNSAFE = re.compile("[\x7f-\x9f\u2028\u2029\ud800-\udfff\ufeff\ufffe\uffff]")
_FENCE_LINE = re.compile(r"^\s*(```|~~~)[\w+-]*\s*$")
_ITEM_LINE = re.compile(r"^\s*-(?:\s+(.*))?$")
_COMMENT_LINE = re.compile(r"^\s*#")


class _TextLoader(yaml.SafeLoader):
    """Safe loader whose plain scalars stay text; only an empty value reads as null."""


_TextLoader.yaml_implicit_resolvers = {}
_TextLoader.add_implicit_resolver("tag:yaml.org,2002:null", re.compile(r"^$"), [""])


def _load_text(text: str) -> Any:
    return yaml.load(text, Loader=_TextLoader)


def quote_entry(text: str) -> str:
    dumped = json.dumps(text, ensure_ascii=False)
    return _YAML_UNSAFE.sub(lambda match: f"\\u{ord(match.group()):04x}", dumped)


def _block(key: str, entries: Iterable[str]) -> list[str]:
    items = [f"  - {quote_entry(entry)}" for entry in entries]
    if not items:
        return [f"{key}: []"]
    return [f"{key}:", *items]


def serialize_memory(memory: Memory) -> str:
    lines = [
        *_block(QUESTIONS_KEY, memory.question_texts),
        *_block(GATHERED_KEY, memory.gathered_texts),
        *_block(INFERRED_KEY, memory.inferred_texts),
        f"{ANSWER_KEY}: {quote_entry(memory.answer)}",
    ]
    return "\n".join(lines) + "\n"


def memory_lists(memory: Memory) -> dict[str, list[str]]:
    """The shape :func:`parse_memory_delta` returns for a serialized memory."""

    return {
        QUESTIONS_KEY: memory.question_texts,
        GATHERED_KEY: memory.gathered_texts,
        INFERRED_KEY: memory.inferred_texts,
        ANSWER_KEY: [memory.answer],
    }


def _key_pattern(keys: Iterable[str]) -> re.Pattern[str]:
    alternatives = "|".join(re.escape(key) for key in sorted(keys, key=len, reverse=True))
    return re.compile(rf"^[ \t]*[\"']?({alternatives})[\"']?[ \t]*:(.*)$", re.MULTILINE)


def _strip_fences(raw: str) -> str:
    return "\n".join(line for line in raw.splitlines() if not _FENCE_LINE.match(line))


def _coerce_scalar(value: Any) -> str | None:
    if value is None:
        return None
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (dict, list)):
        return json.dumps(value, ensure_ascii=False)
    return str(value)


def _coerce_items(value: Any) -> list[str]:
    if value is None:
        return []
    if isinstance(value, list):
        return [item for item in (_coerce_scalar(entry) for entry in value) if item is not None]
    scalar = _coerce_scalar(value)
    return [] if scalar is None else [scalar]


def _decode_entry(fragment: str) -> str:
    text = fragment.strip()
    if text[:1] in ('"', "'"):
        try:
            loaded = _load_text(text)
        except yaml.YAMLError:
            return text.strip("\"'")
        if isinstance(loaded, str):
            return loaded
    return text


def _scan_key(lines: list[str], start: int, rest: str) -> list[str]:
    inline = rest.strip()
    if inline.startswith("["):
        try:
            return _coerce_items(_load_text(inline))
        except yaml.YAMLError:
            return []
    if inline:
        return [_decode_entry(inline)]
    items: list[str] = []
    for line in lines[start + 1 :]:
        if not line.strip() or _COMMENT_LINE.match(line):
            continue
        match = _ITEM_LINE.match(line)
        if match is None:
            break
        if match.group(1):
            items.append(_decode_entry(match.group(1)))
    return items


def _scan(text: str, keys: set[str]) -> dict[str, list[str]]:
    lines = text.splitlines()
    pattern = _key_pattern(keys)
    found: dict[str, list[str]] = {}
    for index, line in enumerate(lines):
        match = pattern.match(line)
        if match is None or match.group(1) in found:
            continue
        found[match.group(1)] = _scan_key(lines, index, match.group(2))
    return found


def _load_yaml(text: str, keys: set[str]) -> dict[str, list[str]] | None:
    try:
        loaded = _load_text(text)
    except yaml.YAMLError:
        return None
    if not isinstance(loaded, Mapping):
        return None
    found = {key: _coerce_items(loaded[key]) for key in keys if key in loaded}
    return found or None


def parse_memory_delta(raw: str, expected_keys: Iterable[str]) -> dict[str, list[str]]:
    """Extract the sequences an agent reply gives for ``expected_keys``.

    Code fences and any prose before the first expected key are discarded. The rest
    is read as YAML with every plain scalar kept as written, so ``Yes`` or ``010``
    stay text. When that fails, a line scanner locates each key and collects its
    ``- item`` lines. Missing keys map to empty lists.
    """

    keys = set(expected_keys)
    cleaned = _strip_fences(raw)
    first = _key_pattern(keys).search(cleaned) if keys else None
    if first is None:
        raise engine_error(
            ErrorCode.PARSE_FAILURE,
            "Reply contains none of the expected keys",
            details={"expected_keys": sorted(keys), "raw_preview": raw[:200]},
        )
    body = cleaned[first.start() :]
    found = _load_yaml(body, keys) or _scan(body, keys)
    return {key: found.get(key, []) for key in sorted(keys)}


__all__ = [
    "ANSWER_KEY",
    "GATHERED_KEY",
    "INFERRED_KEY",
    "MEMORY_KEYS",
    "QUESTIONS_KEY",
    "memory_lists",
    "parse_memory_delta",
    "quote_entry",
    "serialize_memory",
]
