"""Dataset ingestion, long-context filtering and benchmark profiles."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..agents import FREE_FORM_TASK_INST, MULTIPLE_CHOICE_TASK_INST
from ..chunking import DEFAULT_TOKENIZER, count_tokens
from ..errors import ErrorCode, engine_error
from ..logging import get_logger
from .metrics import OPTION_LABELS, normalize_answer

logger = get_logger(__name__)

Metric = Literal["rouge_l", "rouge_1", "em"]

_QUESTION_FIELDS = ("question", "input", "query")
_ANSWER_FIELDS = ("answers", "answer", "gold", "outputs")
_KNOWN_FIELDS = {"id", "context", "options", *_QUESTION_FIELDS, *_ANSWER_FIELDS}


class QaExample(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    context: str
    question: str = Field(min_length=1)
    gold_answers: tuple[str, ...] = Field(min_length=1)
    options: tuple[str, ...] | None = None
    meta: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_options(self) -> "QaExample":
        if self.options:
            golds = {normalize_answer(gold) for gold in self.gold_answers}
            hits = [option for option in self.options if normalize_answer(option) in golds]
            if len(hits) != 1:
                raise ValueError("options must contain exactly one gold answer")
        return self

    @property
    def multiple_choice(self) -> bool:
        return bool(self.options)


class DatasetProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    metric: Metric
    task_inst: str
    min_context_tokens: int = 0


PROFILES: dict[str, DatasetProfile] = {
    "infbench_qa": DatasetProfile(
        name="infbench_qa", metric="rouge_l", task_inst=FREE_FORM_TASK_INST
    ),
    "infbench_mc": DatasetProfile(
        name="infbench_mc", metric="em", task_inst=MULTIPLE_CHOICE_TASK_INST
    ),
    "narrativeqa": DatasetProfile(
        name="narrativeqa",
        metric="rouge_l",
        task_inst=FREE_FORM_TASK_INST,
        min_context_tokens=256000,
    ),
}


def get_profile(name: str) -> DatasetProfile:
    try:
        return PROFILES[name]
    except KeyError as exc:
        raise engine_error(
            ErrorCode.CONFIG,
            "Unknown dataset profile",
            details={"profile": name, "known": sorted(PROFILES)},
        ) from exc


def infer_profile(examples: Iterable[QaExample], name: str = "custom") -> DatasetProfile:
    """Exact match when every example is multiple choice, ROUGE-L otherwise."""

    items = list(examples)
    if items and all(example.multiple_choice for example in items):
        return DatasetProfile(name=name, metric="em", task_inst=MULTIPLE_CHOICE_TASK_INST)
    return DatasetProfile(name=name, metric="rouge_l", task_inst=FREE_FORM_TASK_INST)


def _as_answers(value: Any) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    if isinstance(value, list):
        return [str(item) for item in value if item is not None and str(item).strip()]
    return [str(value)]


def _label_to_option(answers: list[str], options: list[str]) -> list[str]:
    resolved = []
    for answer in answers:
        label = answer.strip().rstrip(".)").lstrip("(").upper()
        position = OPTION_LABELS.find(label) if len(label) == 1 else -1
        if 0 <= position < len(options):
            resolved.append(options[position])
        else:
            resolved.append(answer)
    return resolved


def parse_example(row: Any, index: int) -> QaExample:
    if not isinstance(row, dict):
        raise ValueError("row must be a JSON object")
    question = next((row[key] for key in _QUESTION_FIELDS if row.get(key)), None)
    answers = next(
        (_as_answers(row[key]) for key in _ANSWER_FIELDS if _as_answers(row.get(key))), []
    )
    options = row.get("options") or None
    if options is not None:
        options = [str(option) for option in options]
        answers = _label_to_option(answers, options)
    return QaExample(
        id=str(row.get("id", index)),
        context=str(row.get("context", "")),
        question=str(question or ""),
        gold_answers=tuple(answers),
        options=tuple(options) if options else None,
        meta={key: value for key, value in row.items() if key not in _KNOWN_FIELDS},
    )


def iter_dataset(path: Path, *, skip_bad: bool = False) -> Iterator[QaExample]:
    """Stream examples from a JSON-lines file, one object per line."""

    try:
        handle = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise engine_error(
            ErrorCode.DATASET, "Cannot open dataset", details={"path": str(path)}
        ) from exc
    with handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield parse_example(json.loads(line), number - 1)
            except (json.JSONDecodeError, ValidationError, ValueError) as exc:
                if skip_bad:
                    logger.warning(
                        "dataset_row_skipped", path=str(path), line=number, error=str(exc)
                    )
                    continue
                raise engine_error(
                    ErrorCode.DATASET,
                    "Malformed dataset row",
                    details={"path": str(path), "line": number, "error": str(exc)},
                ) from exc


def load_dataset(
    path: Path, fmt: str = "jsonl", *, skip_bad: bool = False
) -> list[QaExample]:
    if fmt != "jsonl":
        raise engine_error(
            ErrorCode.DATASET, "Unsupported dataset format", details={"format": fmt}
        )
    examples = list(iter_dataset(path, skip_bad=skip_bad))
    ids = [example.id for example in examples]
    if len(set(ids)) != len(ids):
        raise engine_error(
            ErrorCode.DATASET, "Duplicate example ids", details={"path": str(path)}
        )
    return examples


def filter_min_context(
    examples: Iterable[QaExample], min_tokens: int, tokenizer: str = DEFAULT_TOKENIZER
) -> list[QaExample]:
    if min_tokens <= 0:
        return list(examples)
    return [
        example for example in examples if count_tokens(example.context, tokenizer) >= min_tokens
    ]


def format_query(example: QaExample) -> str:
    """The question, followed by lettered options for multiple-choice examples."""

    if not example.options:
        return example.question
    lines = [example.question, "", "Options:"]
    lines.extend(
        f"{OPTION_LABELS[index]}. {option}" for index, option in enumerate(example.options)
    )
    return "\n".join(lines)


__all__ = [
    "DatasetProfile",
    "Metric",
    "PROFILES",
    "QaExample",
    "filter_min_context",
    "format_query",
    "get_profile",
    "infer_profile",
    "iter_dataset",
    "load_dataset",
    "parse_example",
]
