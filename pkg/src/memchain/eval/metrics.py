"""Answer normalization, ROUGE F1 and option-aware exact match."""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from typing import Literal, Sequence

from pydantic import BaseModel, ConfigDict

from ..errors import ErrorCode, engine_error

ARTICLES = frozenset({"a", "an", "the"})
OPTION_LABELS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_SINGLE_LABEL = re.compile(r"^\s*[(\[]?([A-Za-z])[)\].:]?\s*$")
_LETTER = re.compile(r"(?<![A-Za-z0-9.'])([A-Za-z])(?![A-Za-z0-9'])")
_MARK_AFTER = re.compile(r"[)\].:]")
_MARK_BEFORE = re.compile(r"(?:[(\[]|\b(?:option|choice|answer is|answer:)\s*)$", re.IGNORECASE)
_PROSE_AFTER = re.compile(r"\s+([A-Za-z]{2,})")
_CONNECTIVES = frozenset({"or", "and", "nor"})

RougeVariant = Literal["l", "1"]


def strip_punctuation(text: str) -> str:
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def answer_tokens(text: str, *, drop_articles: bool = False) -> list[str]:
    tokens = strip_punctuation(text.casefold()).split()
    if drop_articles:
        while tokens and tokens[0] in ARTICLES:
            tokens.pop(0)
    return tokens


def normalize_answer(text: str) -> str:
    """casefold, delete punctuation, collapse whitespace, drop leading articles."""

    return " ".join(answer_tokens(text, drop_articles=True))


def lcs_length(left: Sequence[str], right: Sequence[str]) -> int:
    if not left or not right:
        return 0
    previous = [0] * (len(right) + 1)
    for token in left:
        current = [0]
        for index, other in enumerate(right, start=1):
            if token == other:
                current.append(previous[index - 1] + 1)
            else:
                current.append(max(previous[index], current[index - 1]))
        previous = current
    return previous[-1]


def _f1(overlap: int, candidate_len: int, reference_len: int) -> float:
    if overlap == 0:
        return 0.0
    return 2 * overlap / (candidate_len + reference_len)


def _check_references(references: Sequence[str]) -> None:
    if not references:
        raise engine_error(ErrorCode.VALIDATION, "At least one reference answer is required")


def rouge_l_f1(candidate: str, references: Sequence[str]) -> float:
    """LCS-based F1 over normalized tokens, best over ``references``."""

    _check_references(references)
    cand = answer_tokens(candidate)
    if not cand:
        return 0.0
    best = 0.0
    for reference in references:
        ref = answer_tokens(reference)
        best = max(best, _f1(lcs_length(cand, ref), len(cand), len(ref)))
    return best


def rouge1_f1(candidate: str, references: Sequence[str]) -> float:
    _check_references(references)
    cand = answer_tokens(candidate)
    if not cand:
        return 0.0
    best = 0.0
    for reference in references:
        ref = answer_tokens(reference)
        overlap = sum((Counter(cand) & Counter(ref)).values())
        best = max(best, _f1(overlap, len(cand), len(ref)))
    return best


def rouge_f1(candidate: str, references: Sequence[str], *, variant: RougeVariant = "l") -> float:
    if variant == "1":
        return rouge1_f1(candidate, references)
    return rouge_l_f1(candidate, references)


class OptionMatch(BaseModel):
    model_config = ConfigDict(frozen=True)

    score: int
    resolved: str | None = None
    ambiguous: bool = False


def _contains(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    width = len(needle)
    if width == 0 or width > len(haystack):
        return False
    target = list(needle)
    return any(
        list(haystack[start : start + width]) == target
        for start in range(len(haystack) - width + 1)
    )


def _subsumes(longer: Sequence[str], shorter: Sequence[str]) -> bool:
    return len(longer) > len(shorter) and _contains(longer, shorter)


def _option_spans(candidate: str, options: Sequence[str]) -> list[tuple[int, int]]:
    spans: list[tuple[int, int]] = []
    for option in options:
        tokens = answer_tokens(option)
        if not tokens:
            continue
        pattern = r"(?<!\w)" + r"\W+".join(re.escape(token) for token in tokens) + r"(?!\w)"
        spans.extend(match.span() for match in re.finditer(pattern, candidate, re.IGNORECASE))
    return spans


def _label_index(candidate: str, match: re.Match[str], count: int) -> int | None:
    position = OPTION_LABELS.index(match.group(1).upper())
    if position >= count:
        return None
    after = candidate[match.end() : match.end() + 2]
    if after[:1] in (".", ":") and after[1:].isalnum():
        return None
    if _MARK_AFTER.match(candidate, match.end()) or _MARK_BEFORE.search(
        candidate, 0, match.start()
    ):
        return position
    prose = _PROSE_AFTER.match(candidate, match.end())
    if prose is not None and prose.group(1).lower() not in _CONNECTIVES:
        return None
    return position


def _labels(candidate: str, options: Sequence[str]) -> set[int]:
    spans = _option_spans(candidate, options)
    found: set[int] = set()
    for match in _LETTER.finditer(candidate):
        if any(start <= match.start() < end for start, end in spans):
            continue
        index = _label_index(candidate, match, len(options))
        if index is not None:
            found.add(index)
    return found


def resolve_option(candidate: str, options: Sequence[str]) -> tuple[int | None, bool]:
    """Index of the single option ``candidate`` designates, and whether it was ambiguous.

    Tried in order: the whole answer equals an option text; the answer is a bare
    label such as ``B`` or ``(b)``; otherwise every option whose text occurs in the
    answer and every label letter is collected, and exactly one distinct option must
    remain. A letter inside an option's text is not a label. Nor is one followed by
    a word, as in ``A fistfight`` or ``I think``, unless it is bracketed, followed by
    ``)``, ``.`` or ``:``, or introduced by "option" or "answer is". Detection
    ignores case throughout.
    """

    normalized = normalize_answer(candidate)
    option_norms = [normalize_answer(option) for option in options]
    exact = [index for index, norm in enumerate(option_norms) if norm and norm == normalized]
    if len(exact) == 1:
        return exact[0], False

    single = _SINGLE_LABEL.match(candidate)
    if single is not None:
        position = OPTION_LABELS.find(single.group(1).upper())
        if 0 <= position < len(options):
            return position, False

    tokens = answer_tokens(candidate)
    option_tokens = [answer_tokens(option, drop_articles=True) for option in options]
    by_text = {index for index, toks in enumerate(option_tokens) if _contains(tokens, toks)}
    by_text = {
        index
        for index in by_text
        if not any(_subsumes(option_tokens[other], option_tokens[index]) for other in by_text)
    }
    found = by_text | _labels(candidate, options)
    if len(found) == 1:
        return found.pop(), False
    return None, len(found) > 1


def match_answer(candidate: str, gold: str, options: Sequence[str] | None = None) -> OptionMatch:
    if not options:
        return OptionMatch(score=int(normalize_answer(candidate) == normalize_answer(gold)))
    index, ambiguous = resolve_option(candidate, options)
    if ambiguous:
        return OptionMatch(score=0, ambiguous=True)
    resolved = options[index] if index is not None else candidate
    score = int(normalize_answer(resolved) == normalize_answer(gold))
    return OptionMatch(score=score, resolved=options[index] if index is not None else None)


def exact_match(candidate: str, gold: str, options: Sequence[str] | None = None) -> int:
    return match_answer(candidate, gold, options).score


__all__ = [
    "ARTICLES",
    "OptionMatch",
    "answer_tokens",
    "exact_match",
    "lcs_length",
    "match_answer",
    "normalize_answer",
    "resolve_option",
    "rouge1_f1",
    "rouge_f1",
    "rouge_l_f1",
    "strip_punctuation",
]
