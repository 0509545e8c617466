from __future__ import annotations

import random
import re

import pytest
from scripting import coma_script, reply, scripted, words

from memchain.chunking import ELLIPSIS_MARKER, count_tokens
from memchain.config import Method, load_settings
from memchain.errors import EngineException, ErrorCode
from memchain.llm_client import CassetteBackend, Role, ScriptedBackend
from memchain.memory import (
    ANSWER_KEY,
    GATHERED_KEY,
    INFERRED_KEY,
    MEMORY_KEYS,
    QUESTIONS_KEY,
    MemoryBudget,
    normalize_entry,
    parse_memory_delta,
)
from memchain.pipeline import (
    RunConfig,
    TraceEvent,
    expected_calls,
    load_trace,
    model_preset,
    run_coa,
    run_coma,
    run_method,
    run_tc,
    text_digest,
    track_text,
)

QUERY = "Where did Kiara and Carter first meet before becoming roommates in Nigeria?"
ENCOUNTERS = "What is Kiara's history of encounters before becoming roommates with Carter?"
WHO = "Who is the pale young gentleman?"
ENCOUNTER_FACT = (
    "Kiara met a pale young gentleman at Miss Kiley's house; they fought in the garden."
)
IDENTITY_FACT = "Carter is the pale young gentleman."
INFERENCE = (
    "Carter is the gentleman Kiara fought in the garden of Miss Kiley's house, "
    "so they first met there."
)
ANSWER = "They first met at Miss Kiley's house, where they fought in the garden."


def _cfg(chunk_size: int = 40, budget: int | None = None, **overrides) -> RunConfig:
    overrides.setdefault("default_model", "test-model")
    return RunConfig(
        chunk_size=chunk_size,
        budget=MemoryBudget.from_tokens(budget or chunk_size, chunk_size),
        **overrides,
    )


def _part(sentence: str, size: int) -> str:
    """``sentence`` padded with single-token words to exactly ``size`` tokens."""

    tokens = count_tokens(sentence)
    assert tokens <= size
    return sentence + " filler" * (size - tokens) + " "


def _novel(size: int = 40) -> str:
    return "".join(
        [
            _part(
                "Kiara met a pale young gentleman at Miss Kiley's house. "
                "They fought in the garden.",
                size,
            ),
            _part("Kiara was apprenticed to Stevie at the forge and dreamed of Nigeria.", size),
            _part("In Nigeria Kiara recognised her roommate Carter as that gentleman.", size),
        ]
    )


def _presence(trace, needle: str) -> list[tuple[str, int | None, bool]]:
    return [(hit["phase"], hit["chunk"], hit["present"]) for hit in track_text(trace, needle)]


@pytest.mark.asyncio
async def test_call_counts_follow_method_formulas() -> None:
    rng = random.Random(101)
    for _ in range(100):
        chunks = rng.randint(1, 20)
        size = rng.randint(5, 20)
        document = words(rng.randint((chunks - 1) * size + 1, chunks * size))
        method = rng.choice(list(Method))
        backend = scripted(coma_script())

        _, trace = await run_method(
            method, QUERY, document, _cfg(size, min(5, size), method=method), backend
        )

        expected = expected_calls(method, chunks)
        assert len(backend.requests) == expected
        stats = trace.stats()
        assert stats["total_calls"] == expected
        assert stats["formula_holds"]
        assert stats["complete"]
        if method is not Method.TC:
            assert trace.chunk_count == chunks


@pytest.mark.asyncio
async def test_three_chunk_runs_make_eleven_four_and_one_calls() -> None:
    document = words(30)
    cfg = _cfg(10, 5)

    _, coma = await run_coma(QUERY, document, cfg, scripted(coma_script()))
    _, coa = await run_coa(QUERY, document, cfg, scripted(coma_script()))
    _, tc = await run_tc(QUERY, document, cfg, scripted(coma_script()))

    assert coma.calls_by_role() == {
        "extract": 3,
        "infer": 3,
        "manager": 1,
        "planner": 1,
        "refine": 3,
    }
    assert coma.stats()["total_calls"] == 11
    assert coa.calls_by_role() == {"coa_worker": 3, "manager": 1}
    assert tc.calls_by_role() == {"tc_direct": 1}
    assert len(coma.snapshots) == 1 + 3 * 3 + 1
    assert all(s.data["digest"] == text_digest(s.data["memory"]) for s in coma.snapshots)


@pytest.mark.asyncio
async def test_single_chunk_coma_makes_five_calls() -> None:
    backend = scripted(coma_script())
    await run_coma(QUERY, words(8), _cfg(10, 5), backend)
    assert len(backend.requests) == 5


@pytest.mark.asyncio
async def test_gathered_tokens_never_exceed_budget() -> None:
    rng = random.Random(202)
    violations = 0
    for _ in range(1000):
        size = rng.randint(20, 60)
        budget = rng.randint(5, size)
        widest = min(5, budget)

        def facts(_: int, widest: int = widest) -> str:
            items = [
                " ".join(f"f{rng.randrange(10**6)}" for _ in range(rng.randint(1, widest)))
                for _ in range(rng.randint(0, 4))
            ]
            return reply(gathered_facts=items)

        script = coma_script()
        script[Role.EXTRACT] = facts
        document = words(rng.randint(1, 3 * size))

        _, trace = await run_coma(QUERY, document, _cfg(size, budget), scripted(script))

        for snapshot in trace.snapshots:
            if snapshot.data["gathered_tokens"] > budget:
                violations += 1
        assert not [w for w in trace.warnings if w["kind"] == "oversized_fact"]
    assert violations == 0


@pytest.mark.asyncio
async def test_structured_memory_carries_early_fact_to_late_resolution() -> None:
    script = {
        Role.PLANNER: reply(questions=[ENCOUNTERS, WHO]),
        Role.EXTRACT: [
            reply(gathered_facts=[ENCOUNTER_FACT]),
            reply(gathered_facts=[]),
            reply(gathered_facts=[IDENTITY_FACT]),
        ],
        Role.INFER: [
            reply(inferred_facts=[]),
            reply(inferred_facts=[]),
            reply(inferred_facts=[INFERENCE]),
        ],
        Role.REFINE: [
            reply(questions=[ENCOUNTERS, WHO]),
            reply(questions=[ENCOUNTERS, WHO]),
            reply(questions=[]),
        ],
        Role.MANAGER: reply(
            answer=ANSWER,
            questions=[],
            rationale="Gathered encounter at Miss Kiley's house; inferred that it was Carter.",
        ),
    }

    answer, trace = await run_coma(QUERY, _novel(), _cfg(40), scripted(script))

    assert trace.chunk_count == 3
    phases = [(phase, chunk) for phase, chunk, _ in _presence(trace, ENCOUNTER_FACT)]
    assert phases == [
        ("plan", None),
        ("extract", 0),
        ("infer", 0),
        ("refine", 0),
        ("extract", 1),
        ("infer", 1),
        ("refine", 1),
        ("extract", 2),
        ("infer", 2),
        ("refine", 2),
        ("synthesize", None),
    ]
    encounter = [present for _, _, present in _presence(trace, ENCOUNTER_FACT)]
    assert encounter == [False] + [True] * 10

    inference = [present for _, _, present in _presence(trace, INFERENCE)]
    assert inference == [False] * 8 + [True] * 3

    sub_question = [present for _, _, present in _presence(trace, ENCOUNTERS)]
    assert sub_question == [True] * 9 + [False] * 2

    assert "Miss Kiley's house" in answer
    assert trace.answer == answer
    final = trace.of(TraceEvent.ANSWER)[-1].data
    assert "Carter" in final["rationale"]
    assert trace.stats()["formula_holds"]


@pytest.mark.asyncio
async def test_rolling_summary_loses_fact_dropped_between_chunks() -> None:
    first = (
        "Kiara, raised by her sister, visits Miss Kiley. There she comes across a pale, "
        "young gentleman who fights her in the garden."
    )
    second = "Kiara is apprenticed to Stevie and dreams of becoming a lady in Nigeria."
    third = "Kiara becomes roommates with Carter in Nigeria. They had met once before."
    backend = scripted(
        {
            Role.COA_WORKER: [first, second, third],
            Role.MANAGER: "Kiara and Carter had met once before, but no details are given.",
        }
    )

    answer, trace = await run_coa(QUERY, _novel(), _cfg(40), backend)

    assert _presence(trace, "pale, young gentleman") == [
        ("summary", 0, True),
        ("summary", 1, False),
        ("summary", 2, False),
    ]
    assert "Kiley" not in answer
    assert first in backend.requests[1].user
    assert third in backend.requests[3].user
    assert trace.stats()["total_calls"] == 4


@pytest.mark.asyncio
async def test_rolling_summary_is_capped_at_budget() -> None:
    backend = scripted({Role.COA_WORKER: "word " * 9000, Role.MANAGER: "garden"})

    _, trace = await run_coa(QUERY, "A short source text.", RunConfig(), backend)

    snapshot = trace.snapshots[-1].data
    assert snapshot["summary_tokens"] <= 8000
    assert count_tokens(snapshot["summary"]) == snapshot["summary_tokens"]
    assert [w["kind"] for w in trace.warnings] == ["summary_truncated"]
    assert "word " * 10 in backend.requests[-1].user


@pytest.mark.asyncio
async def test_truncated_context_removes_middle() -> None:
    backend = scripted({Role.TC_DIRECT: "garden"})
    answer, trace = await run_tc(QUERY, words(100), _cfg(40, tc_limit=20), backend)

    segmented = trace.of(TraceEvent.SEGMENTED)[0].data
    assert answer == "garden"
    assert segmented["truncated"] is True
    assert segmented["document_tokens"] == 100
    assert segmented["kept_tokens"] <= 20
    prompt = backend.requests[0].user
    assert ELLIPSIS_MARKER in prompt
    assert "w0" in prompt and "w99" in prompt and " w50 " not in prompt


TYPED_SCALARS = ["Yes", "No", "On", "12:30", "010", "0x1A", "1_000", "null", "~", "1e3"]
PROSE_LINE = "I also went over the rest of the chunk."


def _garbage(rng: random.Random) -> str:
    alphabet = "abcdefghij XYZ ,.-[]{}\"'`#\n"
    body = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 80)))
    return rng.choice([body, f"```yaml\n{body}\n```", f"Sure! {body}"])


def _corrupted(doc: str, rng: random.Random) -> str:
    """Keep the reply's key but break its body."""

    key = doc.split(":", 1)[0]
    kind = rng.choice(["unquoted", "truncated", "nested", "prose", "typed", "fenced"])
    if kind == "unquoted":
        return doc.replace('"', "")
    if kind == "truncated":
        return doc[: rng.randint(len(key) + 1, len(doc))]
    if kind == "nested":
        note, when = rng.choice(TYPED_SCALARS), rng.choice(TYPED_SCALARS)
        return f"{key}:\n  - {{note: {note}}}\n  - when: {when}\n"
    if kind == "prose":
        lines = doc.splitlines()
        lines.insert(rng.randint(1, len(lines)), PROSE_LINE)
        return "\n".join(lines) + "\n"
    if kind == "typed":
        scalars = rng.sample(TYPED_SCALARS, 3)
        if key == ANSWER_KEY:
            return f"{key}: {scalars[0]}\n"
        return f"{key}:\n" + "".join(f"  - {scalar}\n" for scalar in scalars)
    return f"```yaml\n{_corrupted(doc, rng)}```"


def _words(text: str) -> set[str]:
    return set(re.findall(r"\w+", text))


def _assert_well_formed(memory: str, phase: str, budget: int, gathered_tokens: int) -> None:
    parsed = parse_memory_delta(memory, MEMORY_KEYS)
    for key in (QUESTIONS_KEY, GATHERED_KEY, INFERRED_KEY):
        entries = parsed[key]
        assert all(entry and entry == normalize_entry(entry) for entry in entries)
        assert len(set(entries)) == len(entries)
    if phase != "synthesize":
        assert parsed[ANSWER_KEY] == [""]
    assert gathered_tokens <= budget or len(parsed[GATHERED_KEY]) == 1


@pytest.mark.asyncio
async def test_malformed_replies_never_corrupt_memory() -> None:
    rng = random.Random(303)
    for _ in range(500):
        parse_retry_max = rng.randint(0, 2)

        def maybe_broken(valid):
            def respond(call: int) -> str:
                roll = rng.random()
                if roll < 0.3:
                    return _garbage(rng)
                if roll < 0.7:
                    return _corrupted(valid(call), rng)
                return valid(call)

            return respond

        script = {
            Role.PLANNER: maybe_broken(lambda _: reply(questions=["Q1", "Q2"])),
            Role.EXTRACT: maybe_broken(
                lambda call: reply(gathered_facts=[f"fact {call}", f"seen at {call}"])
            ),
            Role.INFER: maybe_broken(lambda call: reply(inferred_facts=[f"inferred {call}"])),
            Role.REFINE: maybe_broken(lambda call: reply(questions=[f"R{call}", "Q1"])),
            Role.MANAGER: maybe_broken(lambda _: reply(answer="garden")),
        }
        document = words(rng.randint(1, 30))
        _, trace = await run_coma(
            QUERY, document, _cfg(10, 10, parse_retry_max=parse_retry_max), scripted(script)
        )

        fallbacks = 0
        previous = None
        pending = None
        for record in trace:
            if record.event is TraceEvent.EXCHANGE:
                pending = record.data
                assert len(pending["replies"]) <= parse_retry_max + 1
                if not pending["fallback"]:
                    last = _words(pending["replies"][-1])
                    assert all(_words(item) <= last for item in pending["items"])
            elif record.event is TraceEvent.SNAPSHOT:
                memory = record.data["memory"]
                phase = record.data["phase"]
                _assert_well_formed(memory, phase, 10, record.data["gathered_tokens"])
                if pending is not None and pending["fallback"]:
                    fallbacks += 1
                    if phase == "plan":
                        assert parse_memory_delta(memory, [QUESTIONS_KEY]) == {
                            QUESTIONS_KEY: [QUERY]
                        }
                    elif pending["kind"] != "answer":
                        assert memory == previous
                previous = memory
                pending = None
        warned = [w for w in trace.warnings if w["kind"] == "parse_fallback"]
        assert len(warned) == fallbacks
        assert trace.complete


@pytest.mark.asyncio
async def test_cassette_replay_is_deterministic(tmp_path) -> None:
    path = tmp_path / "coma.jsonl"
    recorder = CassetteBackend(path, "record", inner=scripted(coma_script()))
    answer, recorded = await run_coma(QUERY, _novel(), _cfg(40), recorder)

    replays = []
    for _ in range(2):
        replay = CassetteBackend(path)
        replay_answer, trace = await run_coma(QUERY, _novel(), _cfg(40), replay)
        assert replay_answer == answer
        replays.append(trace.canonical_lines())

    assert replays[0] == replays[1] == recorded.canonical_lines()


@pytest.mark.asyncio
async def test_replay_with_other_configuration_is_mismatch(tmp_path) -> None:
    path = tmp_path / "coma.jsonl"
    recorder = CassetteBackend(path, "record", inner=scripted(coma_script()))
    await run_coma(QUERY, _novel(), _cfg(40), recorder)

    with pytest.raises(EngineException) as exc:
        await run_coma(QUERY, _novel(), _cfg(40, default_model="other"), CassetteBackend(path))
    assert exc.value.code == ErrorCode.CASSETTE_MISMATCH


@pytest.mark.asyncio
async def test_fatal_backend_error_persists_partial_trace(tmp_path) -> None:
    path = tmp_path / "trace.jsonl"
    backend = ScriptedBackend([reply(questions=["Q1"]), reply(gathered_facts=["a fact"])])

    with pytest.raises(EngineException) as exc:
        await run_coma(QUERY, words(30), _cfg(10, 5), backend, trace_path=path)
    assert exc.value.code == ErrorCode.SCRIPT_EXHAUSTED

    trace = load_trace(path)
    assert trace.failed
    assert not trace.complete
    assert trace.records[-1].event is TraceEvent.ERROR
    assert trace.records[-1].data["code"] == "SCRIPT_EXHAUSTED"
    assert len(trace.exchanges) == 2


@pytest.mark.asyncio
async def test_empty_inputs_are_rejected() -> None:
    for query, document in (("", "text"), ("question", "   ")):
        with pytest.raises(EngineException) as exc:
            await run_coma(query, document, _cfg(10, 5), scripted(coma_script()))
        assert exc.value.code == ErrorCode.VALIDATION


@pytest.mark.asyncio
async def test_role_models_reach_requests() -> None:
    models = model_preset("big-model", extract="small-model")
    backend = scripted(coma_script())
    await run_coma(QUERY, words(5), _cfg(10, 5, models=models), backend)

    by_role = {request.role_tag: request.model for request in backend.requests}
    assert by_role[Role.EXTRACT] == "small-model"
    assert by_role[Role.PLANNER] == "big-model"
    assert by_role[Role.MANAGER] == "big-model"


def test_run_config_from_settings() -> None:
    settings = load_settings(
        overrides={
            "run": {"chunk_size": 1000, "k_fraction": 0.25, "memory_budget_tokens": 10},
            "llm": {"default_model": "m", "models": {"extract": "small"}},
        }
    )
    cfg = RunConfig.from_settings(settings, method=Method.COA)

    assert cfg.budget.max_tokens == 250
    assert cfg.method is Method.COA
    runtime = cfg.runtime(ScriptedBackend())
    assert runtime.model_for(Role.EXTRACT) == "small"
    assert runtime.model_for(Role.MANAGER) == "m"


def test_run_config_rejects_budget_above_chunk_size() -> None:
    settings = load_settings(overrides={"run": {"chunk_size": 100, "memory_budget_tokens": 200}})
    with pytest.raises(EngineException) as exc:
        RunConfig.from_settings(settings)
    assert exc.value.code == ErrorCode.VALIDATION


def test_run_config_rejects_unknown_tokenizer() -> None:
    settings = load_settings(overrides={"run": {"tokenizer": "nope"}})
    with pytest.raises(EngineException) as exc:
        RunConfig.from_settings(settings)
    assert exc.value.code == ErrorCode.CONFIG


def test_model_preset_rejects_unknown_roles() -> None:
    assert model_preset("m")[Role.TC_DIRECT] == "m"
    with pytest.raises(EngineException) as exc:
        model_preset("m", summarizer="x")
    assert exc.value.code == ErrorCode.CONFIG
