"""Datasets, scorers and score reports."""

from .datasets import (
    PROFILES,
    DatasetProfile,
    QaExample,
    filter_min_context,
    format_query,
    get_profile,
    infer_profile,
    load_dataset,
)
from .metrics import (
    OptionMatch,
    exact_match,
    match_answer,
    normalize_answer,
    resolve_option,
    rouge1_f1,
    rouge_f1,
    rouge_l_f1,
)
from .report import (
    MethodSummary,
    ScoreReport,
    ScoreRow,
    aggregate,
    failed_row,
    render_table,
    score_answer,
    write_report,
)

__all__ = [
    "DatasetProfile",
    "MethodSummary",
    "OptionMatch",
    "PROFILES",
    "QaExample",
    "ScoreReport",
    "ScoreRow",
    "aggregate",
    "exact_match",
    "failed_row",
    "filter_min_context",
    "format_query",
    "get_profile",
    "infer_profile",
    "load_dataset",
    "match_answer",
    "normalize_answer",
    "render_table",
    "resolve_option",
    "rouge1_f1",
    "rouge_f1",
    "rouge_l_f1",
    "score_answer",
    "write_report",
]
