"""Command-line entry point: single runs, benchmark sweeps and trace inspection."""

from __future__ import annotations

import argparse
import asyncio
import json
import random
import re
import sys
from pathlib import Path
from typing import Any, Sequence

from pydantic import ValidationError

from .config import MemchainSettings, Method, load_settings
from .errors import EngineException, ErrorCode
from .eval import (
    QaExample,
    ScoreRow,
    aggregate,
    failed_row,
    filter_min_context,
    format_query,
    get_profile,
    infer_profile,
    load_dataset,
    render_table,
    score_answer,
    write_report,
)
from .llm_client import LlmBackend, Role
from .llm_client.factory import build_backend, build_inner_backend
from .logging import configure_logging, example_context, get_logger
from .pipeline import (
    RunConfig,
    TraceEvent,
    load_trace,
    run_method,
    text_digest,
    track_text,
)

logger = get_logger(__name__)

EXIT_CODES: dict[ErrorCode, int] = {
    ErrorCode.CONFIG: 2,
    ErrorCode.VALIDATION: 2,
    ErrorCode.TEMPLATE: 2,
    ErrorCode.DATASET: 3,
    ErrorCode.TRACE_INTEGRITY: 4,
    ErrorCode.CASSETTE_MISMATCH: 5,
    ErrorCode.SCRIPT_EXHAUSTED: 5,
    ErrorCode.TRANSPORT: 6,
    ErrorCode.PROVIDER: 6,
    ErrorCode.AUTH: 6,
    ErrorCode.RATE_LIMIT: 6,
    ErrorCode.PARSE_FAILURE: 7,
}

# Errors that make every remaining example fail the same way.
_FATAL_IN_BENCH = {ErrorCode.AUTH, ErrorCode.CONFIG}

_UNSAFE_NAME = re.compile(r"[^A-Za-z0-9._-]")


def _role_model(value: str) -> tuple[str, str]:
    role, sep, model = value.partition("=")
    if not sep or not model:
        raise argparse.ArgumentTypeError("expected ROLE=MODEL")
    try:
        Role(role)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"unknown role {role!r}") from exc
    return role, model


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("overrides")
    group.add_argument("--backend", choices=["http", "scripted", "cassette"])
    group.add_argument("--model", help="Default model for every role")
    group.add_argument(
        "--role-model",
        action="append",
        type=_role_model,
        default=[],
        metavar="ROLE=MODEL",
        help="Model for a single role; repeatable",
    )
    group.add_argument("--chunk-size", type=int)
    group.add_argument("--budget-tokens", type=int)
    group.add_argument("--k-fraction", type=float)
    group.add_argument("--tc-limit", type=int)
    group.add_argument("--tokenizer")
    group.add_argument("--parse-retry-max", type=int)
    group.add_argument("--question-cap", type=int)
    group.add_argument("--task-inst")
    group.add_argument("--prompt-dir", type=Path)
    group.add_argument("--cassette", type=Path, help="Cassette file (run) or directory (bench)")
    group.add_argument("--cassette-mode", choices=["record", "replay"])
    group.add_argument("--cassette-inner", choices=["http", "scripted"])
    group.add_argument("--scripted", type=Path, help="JSON-lines reply queue")
    group.add_argument("--output-dir", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memchain", description="Long-context question answering over agent memory"
    )
    parser.add_argument("--config", type=Path, help="TOML configuration file")
    parser.add_argument("--log-level", help="Logging level (default from configuration)")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Answer one question over one document")
    run.add_argument("--question", required=True)
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--document", type=Path, help="Document file")
    source.add_argument("--document-text", help="Document given inline")
    run.add_argument("--method", choices=[method.value for method in Method])
    run.add_argument("--trace", type=Path, help="Trace output path")
    _add_overrides(run)

    bench = commands.add_parser("bench", help="Score methods over a dataset")
    bench.add_argument("--dataset", type=Path, required=True)
    bench.add_argument(
        "--method",
        action="append",
        choices=[method.value for method in Method],
        help="Method to run; repeatable, default all",
    )
    bench.add_argument("--profile")
    bench.add_argument(
        "--metric",
        choices=["rouge_l", "rouge_1", "em"],
        help="Primary score (default from the dataset profile)",
    )
    bench.add_argument("--limit", type=int)
    bench.add_argument("--resume", action="store_true")
    bench.add_argument("--parallelism", type=int)
    bench.add_argument("--seed", type=int)
    bench.add_argument("--skip-bad", action="store_true", default=None)
    bench.add_argument("--min-context-tokens", type=int)
    bench.add_argument("--out", type=Path, help="Sweep output directory")
    _add_overrides(bench)

    trace = commands.add_parser("trace", help="Inspect a recorded trace")
    trace_commands = trace.add_subparsers(dest="trace_command", required=True)
    show = trace_commands.add_parser("show", help="Print records and memory snapshots")
    show.add_argument("path", type=Path)
    stats = trace_commands.add_parser("stats", help="Agent calls per role and the call formula")
    stats.add_argument("path", type=Path)
    find = trace_commands.add_parser("find", help="Which snapshots contain a text")
    find.add_argument("path", type=Path)
    find.add_argument("text")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    llm: dict[str, Any] = {}
    run: dict[str, Any] = {}
    bench: dict[str, Any] = {}

    def put(section: dict[str, Any], key: str, value: Any) -> None:
        if value is not None:
            section[key] = value

    put(llm, "backend", getattr(args, "backend", None))
    put(llm, "default_model", getattr(args, "model", None))
    put(llm, "cassette_path", getattr(args, "cassette", None))
    put(llm, "cassette_mode", getattr(args, "cassette_mode", None))
    put(llm, "cassette_inner", getattr(args, "cassette_inner", None))
    put(llm, "scripted_path", getattr(args, "scripted", None))
    if getattr(args, "role_model", None):
        llm["models"] = dict(args.role_model)

    put(run, "method", getattr(args, "method", None) if args.command == "run" else None)
    put(run, "chunk_size", getattr(args, "chunk_size", None))
    put(run, "memory_budget_tokens", getattr(args, "budget_tokens", None))
    put(run, "k_fraction", getattr(args, "k_fraction", None))
    put(run, "tc_limit", getattr(args, "tc_limit", None))
    put(run, "tokenizer", getattr(args, "tokenizer", None))
    put(run, "parse_retry_max", getattr(args, "parse_retry_max", None))
    put(run, "question_cap", getattr(args, "question_cap", None))
    put(run, "task_inst", getattr(args, "task_inst", None))
    put(run, "prompt_dir", getattr(args, "prompt_dir", None))
    put(run, "output_dir", getattr(args, "output_dir", None))
    put(run, "log_level", args.log_level)

    put(bench, "parallelism", getattr(args, "parallelism", None))
    put(bench, "seed", getattr(args, "seed", None))
    put(bench, "skip_bad", getattr(args, "skip_bad", None))
    put(bench, "min_context_tokens", getattr(args, "min_context_tokens", None))
    put(bench, "profile", getattr(args, "profile", None))
    put(bench, "metric", getattr(args, "metric", None))

    overrides = {"llm": llm, "run": run, "bench": bench}
    return {section: values for section, values in overrides.items() if values}


def _safe_name(value: str) -> str:
    return _UNSAFE_NAME.sub("_", value) or "_"


class _Backends:
    """Opens backends for a command and closes everything it opened."""

    def __init__(self, settings: MemchainSettings) -> None:
        self.settings = settings
        self._shared_inner: LlmBackend | None = None
        self._opened: list[LlmBackend] = []

    @property
    def per_example_cassettes(self) -> bool:
        return self.settings.llm.backend == "cassette"

    async def open(self, cassette_path: Path | None = None) -> LlmBackend:
        llm = self.settings.llm
        inner = None
        if llm.backend == "cassette" and llm.cassette_mode == "record":
            if self._shared_inner is None:
                self._shared_inner = await build_inner_backend(self.settings, llm.cassette_inner)
                self._opened.append(self._shared_inner)
            inner = self._shared_inner
        backend = await build_backend(self.settings, cassette_path=cassette_path, inner=inner)
        self._opened.append(backend)
        return backend

    async def aclose(self) -> None:
        for backend in reversed(self._opened):
            await backend.aclose()
        self._opened.clear()


async def _run_command(args: argparse.Namespace, settings: MemchainSettings) -> int:
    if args.document is not None:
        try:
            document = args.document.read_text(encoding="utf-8")
        except OSError as exc:
            print(f"error[CONFIG]: cannot read document: {exc}", file=sys.stderr)
            return EXIT_CODES[ErrorCode.CONFIG]
    else:
        document = args.document_text

    cfg = RunConfig.from_settings(settings)
    method = cfg.method
    trace_path = args.trace
    if trace_path is None:
        key = text_digest(f"{args.question}\x00{document}")[:12]
        trace_path = settings.run.output_dir / f"run-{method.value}-{key}.jsonl"

    backends = _Backends(settings)
    try:
        backend = await backends.open()
        answer, trace = await run_method(
            method, args.question, document, cfg, backend, trace_path=trace_path
        )
    finally:
        await backends.aclose()

    stats = trace.stats()
    logger.info(
        "run_complete",
        method=method.value,
        trace=str(trace_path),
        calls=stats["total_calls"],
        requests=stats["requests"],
    )
    print(answer)
    return 0


def _read_rows(path: Path) -> dict[tuple[str, str], ScoreRow]:
    rows: dict[tuple[str, str], ScoreRow] = {}
    if not path.exists():
        return rows
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
            if "event" in payload:
                continue
            row = ScoreRow.model_validate(payload)
        except (json.JSONDecodeError, ValidationError, TypeError):
            logger.warning("bench_row_unreadable", path=str(path), line=number)
            continue
        rows[(row.method, row.id)] = row
    return rows


def _select_examples(
    args: argparse.Namespace, settings: MemchainSettings
) -> tuple[list[QaExample], Any]:
    examples = load_dataset(args.dataset, skip_bad=settings.bench.skip_bad)
    if settings.bench.profile:
        profile = get_profile(settings.bench.profile)
    else:
        profile = infer_profile(examples, name=args.dataset.stem)
    if settings.bench.metric is not None:
        profile = profile.model_copy(update={"metric": settings.bench.metric})
    min_tokens = settings.bench.min_context_tokens or profile.min_context_tokens
    selected = filter_min_context(examples, min_tokens, settings.run.tokenizer)
    if settings.bench.seed is not None:
        random.Random(settings.bench.seed).shuffle(selected)
    if args.limit is not None:
        selected = selected[: args.limit]
    logger.info(
        "bench_examples_selected",
        dataset=str(args.dataset),
        profile=profile.name,
        metric=profile.metric,
        loaded=len(examples),
        selected=len(selected),
        min_context_tokens=min_tokens,
    )
    return selected, profile


async def _bench_command(args: argparse.Namespace, settings: MemchainSettings) -> int:
    examples, profile = _select_examples(args, settings)
    methods = [Method(value) for value in (args.method or [m.value for m in Method])]
    out_dir = args.out or settings.run.output_dir / f"bench-{args.dataset.stem}"
    out_dir.mkdir(parents=True, exist_ok=True)
    rows_path = out_dir / "rows.jsonl"

    rows = _read_rows(rows_path) if args.resume else {}
    if not args.resume:
        rows_path.write_text("", encoding="utf-8")
    done = {key for key, row in rows.items() if row.error is None}

    parallelism = settings.bench.parallelism
    scripted = settings.llm.backend == "scripted" or (
        settings.llm.backend == "cassette"
        and settings.llm.cassette_mode == "record"
        and settings.llm.cassette_inner == "scripted"
    )
    if scripted and parallelism > 1:
        logger.warning("bench_parallelism_forced", requested=parallelism, used=1)
        parallelism = 1

    task_inst = settings.run.task_inst or profile.task_inst
    backends = _Backends(settings)
    shared = None if backends.per_example_cassettes else await backends.open()
    cassette_dir = settings.llm.cassette_path
    if backends.per_example_cassettes and cassette_dir is None:
        await backends.aclose()
        print("error[CONFIG]: cassette backend needs --cassette DIR", file=sys.stderr)
        return EXIT_CODES[ErrorCode.CONFIG]

    semaphore = asyncio.Semaphore(parallelism)
    write_lock = asyncio.Lock()

    async def record(row: ScoreRow) -> None:
        async with write_lock:
            rows[(row.method, row.id)] = row
            with rows_path.open("a", encoding="utf-8") as handle:
                handle.write(row.model_dump_json() + "\n")

    async def one(method: Method, example: QaExample) -> None:
        with example_context(method.value, example.id):
            await score_one(method, example)

    async def score_one(method: Method, example: QaExample) -> None:
        name = _safe_name(example.id)
        cfg = RunConfig.from_settings(settings, method=method, task_inst=task_inst)
        trace_path = out_dir / "traces" / method.value / f"{name}.jsonl"
        async with semaphore:
            backend = shared
            if backend is None:
                assert cassette_dir is not None
                backend = await backends.open(cassette_dir / method.value / f"{name}.jsonl")
            try:
                answer, trace = await run_method(
                    method,
                    format_query(example),
                    example.context,
                    cfg,
                    backend,
                    trace_path=trace_path,
                )
            except EngineException as exc:
                if exc.code in _FATAL_IN_BENCH:
                    raise
                logger.warning(
                    "bench_example_failed", id=example.id, method=method.value, code=exc.code.value
                )
                await record(failed_row(example, method.value, profile.metric, exc.code.value))
                return
        stats = trace.stats()
        row = score_answer(
            example,
            method.value,
            profile.metric,
            answer,
            calls=len(trace.exchanges),
            requests=stats["requests"],
            prompt_tokens=stats["prompt_tokens"],
            completion_tokens=stats["completion_tokens"],
            wall_ms=trace.wall_ms,
        )
        logger.info("bench_example_done", id=example.id, method=method.value, score=row.score)
        await record(row)

    pending = [
        (method, example)
        for method in methods
        for example in examples
        if (method.value, example.id) not in done
    ]
    logger.info("bench_started", pending=len(pending), resumed=len(done), parallelism=parallelism)
    try:
        async with asyncio.TaskGroup() as group:
            for method, example in pending:
                group.create_task(one(method, example))
    except ExceptionGroup as grouped:
        first = grouped.exceptions[0]
        raise first from None
    finally:
        await backends.aclose()

    wanted = {(method.value, example.id) for method in methods for example in examples}
    final_rows = [row for key, row in rows.items() if key in wanted]
    with rows_path.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps({"event": "complete", "rows": len(final_rows)}) + "\n")

    report = aggregate(
        final_rows,
        dataset=profile.name,
        metric=profile.metric,
        config={
            "settings": settings.masked(),
            "methods": [method.value for method in methods],
            "examples": len(examples),
        },
        complete=len(final_rows) == len(wanted),
    )
    json_path, _ = write_report(report, out_dir)
    logger.info("bench_finished", report=str(json_path), rows=len(final_rows))
    print(render_table([report]), end="")
    return 0


def _trace_command(args: argparse.Namespace) -> int:
    trace = load_trace(args.path)
    if args.trace_command == "stats":
        stats = trace.stats()
        print(json.dumps(stats, indent=2, sort_keys=True))
        if stats["complete"] and not stats["formula_holds"]:
            return 1
        return 0
    if args.trace_command == "find":
        for hit in track_text(trace, args.text):
            print(json.dumps(hit, sort_keys=True))
        return 0

    for record in trace:
        data = record.data
        if record.event is TraceEvent.SNAPSHOT:
            print(f"[{record.seq}] snapshot phase={data.get('phase')} chunk={data.get('chunk')}")
            content = str(data.get("memory", data.get("summary", "")))
            for line in content.splitlines():
                print(f"    {line}")
        elif record.event is TraceEvent.EXCHANGE:
            print(
                f"[{record.seq}] exchange role={data.get('role')} chunk={data.get('chunk_index')}"
                f" attempts={len(data.get('replies', ()))} fallback={data.get('fallback')}"
            )
        else:
            print(f"[{record.seq}] {record.event.value} {json.dumps(data, sort_keys=True)}")
    return 0


async def _dispatch(args: argparse.Namespace, settings: MemchainSettings) -> int:
    if args.command == "run":
        return await _run_command(args, settings)
    return await _bench_command(args, settings)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "trace":
            configure_logging(args.log_level or "WARNING")
            return _trace_command(args)
        settings = load_settings(args.config, _overrides(args))
        configure_logging(settings.run.log_level)
        logger.info("effective_config", command=args.command, settings=settings.masked())
        return asyncio.run(_dispatch(args, settings))
    except EngineException as exc:
        print(f"error[{exc.code.value}]: {exc}", file=sys.stderr)
        if exc.error.details:
            print(json.dumps(dict(exc.error.details), sort_keys=True, default=str), file=sys.stderr)
        return EXIT_CODES.get(exc.code, 1)
    except ValidationError as exc:
        print(f"error[CONFIG]: {exc}", file=sys.stderr)
        return EXIT_CODES[ErrorCode.CONFIG]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())


__all__ = ["EXIT_CODES", "build_parser", "main"]
