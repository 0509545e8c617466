"""Token counting, segmentation and truncation of source documents."""

from .segment import (
    BOUNDARY_SLACK,
    ELLIPSIS_MARKER,
    Chunk,
    segment,
    truncate_head,
    truncate_middle,
)
from .tokenizers import (
    DEFAULT_TOKENIZER,
    RegexTokenizer,
    Tokenizer,
    count_tokens,
    get_tokenizer,
    register_tokenizer,
)

__all__ = [
    "BOUNDARY_SLACK",
    "Chunk",
    "DEFAULT_TOKENIZER",
    "ELLIPSIS_MARKER",
    "RegexTokenizer",
    "Tokenizer",
    "count_tokens",
    "get_tokenizer",
    "register_tokenizer",
    "segment",
    "truncate_head",
    "truncate_middle",
]
