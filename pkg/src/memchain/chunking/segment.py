"""Fixed-size document segmentation and token-limited truncation."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..errors import ErrorCode, engine_error
from .tokenizers import DEFAULT_TOKENIZER, Span, Tokenizer, get_tokenizer

BOUNDARY_SLACK = 64
ELLIPSIS_MARKER = "\n…\n"
_SENTENCE_END = (".", "!", "?")


class Chunk(BaseModel):
    """Indexed, token-counted contiguous span of a source document."""

    model_config = ConfigDict(frozen=True)

    index: int = Field(ge=0)
    text: str
    tokens: int = Field(ge=0)


def _is_word_boundary(text: str, position: int) -> bool:
    return 0 < position < len(text) and (text[position - 1].isspace() or text[position].isspace())


def _ends_sentence(text: str, span: Span) -> bool:
    return text[span[0] : span[1]].rstrip().endswith(_SENTENCE_END)


def _snap_back(text: str, spans: list[Span], target: int, floor: int) -> int:
    for index in range(target, floor - 1, -1):
        if _is_word_boundary(text, spans[index][0]):
            return index
    return target


def segment(
    text: str,
    chunk_size: int,
    tokenizer: str = DEFAULT_TOKENIZER,
    *,
    boundary_slack: int = BOUNDARY_SLACK,
) -> list[Chunk]:
    """Split ``text`` greedily into word-aligned chunks of at most ``chunk_size`` tokens.

    Cuts land on the token start nearest to the size limit that follows whitespace,
    looking back at most ``boundary_slack`` tokens; whitespace stays with the chunk it
    trails. Joining the chunk texts reproduces the input exactly.
    """

    if chunk_size <= 0:
        raise engine_error(
            ErrorCode.VALIDATION, "chunk_size must be positive", details={"chunk_size": chunk_size}
        )
    if not text:
        return []

    tok = get_tokenizer(tokenizer)
    spans = tok.spans(text)
    if not spans:
        return [Chunk(index=0, text=text, tokens=0)]

    chunks: list[Chunk] = []
    total = len(spans)
    first_token = 0
    start_char = 0
    while True:
        target = min(first_token + chunk_size, total - 1)
        if total - first_token <= chunk_size or target <= first_token:
            rest = text[start_char:]
            rest_tokens = tok.count(rest)
            if rest_tokens <= chunk_size or target <= first_token:
                chunks.append(Chunk(index=len(chunks), text=rest, tokens=rest_tokens))
                return chunks

        floor = max(first_token + 1, target - boundary_slack)
        cut = _snap_back(text, spans, target, floor)
        piece = text[start_char : spans[cut][0]]
        piece_tokens = tok.count(piece)
        while piece_tokens > chunk_size and cut > first_token + 1:
            cut -= 1
            piece = text[start_char : spans[cut][0]]
            piece_tokens = tok.count(piece)

        chunks.append(Chunk(index=len(chunks), text=piece, tokens=piece_tokens))
        first_token = cut
        start_char = spans[cut][0]


def _head_end(text: str, spans: list[Span], budget: int, slack: int) -> int:
    if budget <= 0:
        return 0
    for kept in range(budget, max(1, budget - slack) - 1, -1):
        if _ends_sentence(text, spans[kept - 1]):
            return spans[kept - 1][1]
    return spans[budget - 1][1]


def _tail_start(text: str, spans: list[Span], budget: int, slack: int) -> int:
    if budget <= 0:
        return len(text)
    first = len(spans) - budget
    for start in range(first, min(len(spans) - 1, first + slack) + 1):
        if start > 0 and _ends_sentence(text, spans[start - 1]):
            return spans[start][0]
    return spans[first][0]


def _fits(tok: Tokenizer, text: str, limit: int) -> bool:
    return tok.count(text) <= limit


def truncate_middle(
    text: str,
    limit: int,
    tokenizer: str = DEFAULT_TOKENIZER,
    *,
    marker: str = ELLIPSIS_MARKER,
    boundary_slack: int = BOUNDARY_SLACK,
) -> str:
    """Remove the middle of ``text`` so that the result fits in ``limit`` tokens.

    The budget left after the marker is split ceil/floor between head and tail; both
    cut points move outward to the nearest sentence end within ``boundary_slack``
    tokens. Inputs already within the limit are returned unchanged.
    """

    if limit <= 0:
        raise engine_error(ErrorCode.VALIDATION, "limit must be positive", details={"limit": limit})
    tok = get_tokenizer(tokenizer)
    if _fits(tok, text, limit):
        return text

    spans = tok.spans(text)
    available = max(0, limit - tok.count(marker))
    head_budget = min((available + 1) // 2, len(spans))
    tail_budget = min(available // 2, len(spans) - head_budget)
    while True:
        head_end = _head_end(text, spans, head_budget, boundary_slack)
        tail_start = max(head_end, _tail_start(text, spans, tail_budget, boundary_slack))
        result = text[:head_end] + marker + text[tail_start:]
        if _fits(tok, result, limit) or (head_budget == 0 and tail_budget == 0):
            return result
        if head_budget >= tail_budget:
            head_budget -= 1
        else:
            tail_budget -= 1


def truncate_head(text: str, limit: int, tokenizer: str = DEFAULT_TOKENIZER) -> str:
    """Keep the longest token-aligned prefix of ``text`` within ``limit`` tokens."""

    if limit <= 0:
        raise engine_error(ErrorCode.VALIDATION, "limit must be positive", details={"limit": limit})
    tok = get_tokenizer(tokenizer)
    if _fits(tok, text, limit):
        return text
    spans = tok.spans(text)
    kept = min(limit, len(spans))
    while kept > 0:
        prefix = text[: spans[kept - 1][1]]
        if _fits(tok, prefix, limit):
            return prefix
        kept -= 1
    return ""


__all__ = [
    "BOUNDARY_SLACK",
    "Chunk",
    "ELLIPSIS_MARKER",
    "segment",
    "truncate_head",
    "truncate_middle",
]
