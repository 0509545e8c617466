"""Pluggable tokenizers and memoised token counting.

The default ``rule`` tokenizer emits one token per run of word characters and one
token per remaining non-space character, i.e. the matches of ``\\w+|[^\\w\\s]``
over the text (Python ``re`` semantics, Unicode-aware). Whitespace never forms a
token. ``whitespace`` emits one token per run of non-space characters.
BPE encodings are available as ``tiktoken:<encoding>`` when the optional extra is
installed.
"""

from __future__ import annotations

import re
import threading
from typing import Any, Protocol

from cachetools import LRUCache, cached

from ..errors import ErrorCode, engine_error

DEFAULT_TOKENIZER = "rule"
TIKTOKEN_PREFIX = "tiktoken:"

Span = tuple[int, int]


class Tokenizer(Protocol):
    name: str

    def spans(self, text: str) -> list[Span]:
        """Character spans of every token, in order."""

    def count(self, text: str) -> int:
        """Number of tokens in ``text``."""


class RegexTokenizer:
    """Tokenizer whose tokens are the matches of a regular expression."""

    def __init__(self, name: str, pattern: str) -> None:
        self.name = name
        self._pattern = re.compile(pattern)

    def spans(self, text: str) -> list[Span]:
        return [match.span() for match in self._pattern.finditer(text)]

    def count(self, text: str) -> int:
        return sum(1 for _ in self._pattern.finditer(text))


class TiktokenTokenizer:
    """Adapter over a tiktoken encoding; spans come from decode offsets."""

    def __init__(self, encoding_name: str) -> None:
        try:
            import tiktoken
        except ModuleNotFoundError as exc:
            raise engine_error(
                ErrorCode.CONFIG,
                "tiktoken tokenizers require the optional 'tiktoken' extra",
                details={"encoding": encoding_name},
            ) from exc
        self.name = f"{TIKTOKEN_PREFIX}{encoding_name}"
        self._encoding: Any = tiktoken.get_encoding(encoding_name)

    def spans(self, text: str) -> list[Span]:
        tokens = self._encoding.encode(text, disallowed_special=())
        if not tokens:
            return []
        _, offsets = self._encoding.decode_with_offsets(tokens)
        ends = [*offsets[1:], len(text)]
        return [(start, end) for start, end in zip(offsets, ends)]

    def count(self, text: str) -> int:
        if not text:
            return 0
        return len(self._encoding.encode(text, disallowed_special=()))


_REGISTRY: dict[str, Tokenizer] = {
    "rule": RegexTokenizer("rule", r"\w+|[^\w\s]"),
    "whitespace": RegexTokenizer("whitespace", r"\S+"),
}
_REGISTRY_LOCK = threading.Lock()


def register_tokenizer(tokenizer: Tokenizer) -> None:
    with _REGISTRY_LOCK:
        _REGISTRY[tokenizer.name] = tokenizer


def get_tokenizer(tokenizer_id: str) -> Tokenizer:
    """Resolve a tokenizer id, loading tiktoken encodings on first use."""

    with _REGISTRY_LOCK:
        found = _REGISTRY.get(tokenizer_id)
        if found is not None:
            return found
        if tokenizer_id.startswith(TIKTOKEN_PREFIX):
            loaded = TiktokenTokenizer(tokenizer_id[len(TIKTOKEN_PREFIX) :])
            _REGISTRY[tokenizer_id] = loaded
            return loaded
    raise engine_error(
        ErrorCode.CONFIG,
        "Unknown tokenizer id",
        details={"tokenizer": tokenizer_id, "registered": sorted(_REGISTRY)},
    )


CACHEABLE_CHARS = 4096


@cached(
    cache=LRUCache(maxsize=8192),
    key=lambda text, tokenizer: (tokenizer, text),
    lock=threading.Lock(),
)
def _cached_count(text: str, tokenizer: str) -> int:
    return get_tokenizer(tokenizer).count(text)


def count_tokens(text: str, tokenizer: str = DEFAULT_TOKENIZER) -> int:
    """Count tokens of ``text`` under a registered tokenizer.

    Short texts such as facts and questions are memoised; documents are not.
    """

    if len(text) > CACHEABLE_CHARS:
        return get_tokenizer(tokenizer).count(text)
    return _cached_count(text, tokenizer)


__all__ = [
    "DEFAULT_TOKENIZER",
    "RegexTokenizer",
    "Span",
    "TiktokenTokenizer",
    "Tokenizer",
    "count_tokens",
    "get_tokenizer",
    "register_tokenizer",
]
