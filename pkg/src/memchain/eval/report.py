"""Per-example score rows, their aggregation and report emission."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from pydantic import BaseModel, ConfigDict, Field

from .datasets import Metric, QaExample
from .metrics import match_answer, rouge1_f1, rouge_l_f1


class ScoreRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    method: str
    metric: Metric
    score: float = Field(ge=0.0, le=1.0)
    rouge_l: float = 0.0
    rouge_1: float = 0.0
    em: int | None = None
    ambiguous: bool = False
    answer: str = ""
    calls: int = 0
    requests: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_ms: int = 0
    error: str | None = None


class MethodSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: str
    examples: int
    mean_score: float
    mean_rouge_l: float
    mean_rouge_1: float
    failures: int
    calls: int
    prompt_tokens: int
    completion_tokens: int


class ScoreReport(BaseModel):
    dataset: str
    metric: Metric
    rows: list[ScoreRow]
    methods: list[MethodSummary]
    coma_coa_call_ratio: float | None = None
    config: dict[str, Any] = Field(default_factory=dict)
    complete: bool = True


def score_answer(
    example: QaExample, method: str, metric: Metric, answer: str, **usage: Any
) -> ScoreRow:
    rouge_l = rouge_l_f1(answer, example.gold_answers)
    rouge_1 = rouge1_f1(answer, example.gold_answers)
    matches = [match_answer(answer, gold, example.options) for gold in example.gold_answers]
    em = max(match.score for match in matches)
    ambiguous = any(match.ambiguous for match in matches)
    score = {"rouge_l": rouge_l, "rouge_1": rouge_1, "em": float(em)}[metric]
    return ScoreRow(
        id=example.id,
        method=method,
        metric=metric,
        score=score,
        rouge_l=rouge_l,
        rouge_1=rouge_1,
        em=em,
        ambiguous=ambiguous,
        answer=answer,
        **usage,
    )


def failed_row(example: QaExample, method: str, metric: Metric, error: str) -> ScoreRow:
    return ScoreRow(id=example.id, method=method, metric=metric, score=0.0, error=error)


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def aggregate(
    rows: Iterable[ScoreRow],
    *,
    dataset: str,
    metric: Metric,
    config: Mapping[str, Any] | None = None,
    complete: bool = True,
) -> ScoreReport:
    """Per-method means and totals; failed rows count as zero."""

    ordered = sorted(rows, key=lambda row: (row.method, row.id))
    by_method: dict[str, list[ScoreRow]] = {}
    for row in ordered:
        by_method.setdefault(row.method, []).append(row)

    summaries = [
        MethodSummary(
            method=method,
            examples=len(group),
            mean_score=_mean([row.score for row in group]),
            mean_rouge_l=_mean([row.rouge_l for row in group]),
            mean_rouge_1=_mean([row.rouge_1 for row in group]),
            failures=sum(1 for row in group if row.error is not None),
            calls=sum(row.calls for row in group),
            prompt_tokens=sum(row.prompt_tokens for row in group),
            completion_tokens=sum(row.completion_tokens for row in group),
        )
        for method, group in sorted(by_method.items())
    ]
    calls = {summary.method: summary.calls for summary in summaries}
    ratio = None
    if calls.get("coma") and calls.get("coa"):
        ratio = calls["coma"] / calls["coa"]
    return ScoreReport(
        dataset=dataset,
        metric=metric,
        rows=ordered,
        methods=summaries,
        coma_coa_call_ratio=ratio,
        config=dict(config or {}),
        complete=complete,
    )


def render_table(reports: Sequence[ScoreReport]) -> str:
    """Methods as rows, datasets as columns, scores in percent."""

    datasets = [report.dataset for report in reports]
    methods = sorted({summary.method for report in reports for summary in report.methods})
    header = ["method", *datasets, "calls"]
    body: list[list[str]] = []
    for method in methods:
        line = [method]
        calls = 0
        for report in reports:
            found = next((s for s in report.methods if s.method == method), None)
            line.append(f"{100 * found.mean_score:.2f}" if found else "-")
            calls += found.calls if found else 0
        line.append(str(calls))
        body.append(line)
    widths = [max(len(row[col]) for row in [header, *body]) for col in range(len(header))]

    def fmt(row: list[str]) -> str:
        cells = [row[0].ljust(widths[0])]
        cells.extend(cell.rjust(widths[index]) for index, cell in enumerate(row[1:], start=1))
        return "  ".join(cells).rstrip()

    lines = [fmt(header), "  ".join("-" * width for width in widths), *map(fmt, body)]
    for report in reports:
        if report.coma_coa_call_ratio is not None:
            lines.append(f"{report.dataset}: coma/coa calls = {report.coma_coa_call_ratio:.2f}")
    return "\n".join(lines) + "\n"


def write_report(report: ScoreReport, out_dir: Path) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    table_path = out_dir / "report.txt"
    json_path.write_text(
        json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    table_path.write_text(render_table([report]), encoding="utf-8")
    return json_path, table_path


__all__ = [
    "MethodSummary",
    "ScoreReport",
    "ScoreRow",
    "aggregate",
    "failed_row",
    "render_table",
    "score_answer",
    "write_report",
]
