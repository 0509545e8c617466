from __future__ import annotations

import json

import httpx
import pytest

respx = pytest.importorskip("respx")

from memchain.config import load_settings
from memchain.errors import EngineException, ErrorCode
from memchain.llm_client import (
    BackoffStrategy,
    CassetteBackend,
    HttpChatBackend,
    LlmRequest,
    LlmResponse,
    Role,
    ScriptedBackend,
    UsageLedger,
    complete,
    load_cassette,
)
from memchain.llm_client.factory import build_backend, build_inner_backend

BASE_URL = "https://llm.example.com/v1"
COMPLETIONS_URL = f"{BASE_URL}/chat/completions"


def _completion(text: str, prompt_tokens: int = 12, completion_tokens: int = 3) -> dict:
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


def _backend(max_retries: int = 2) -> HttpChatBackend:
    return HttpChatBackend(
        base_url=BASE_URL,
        api_key="sk-test",
        max_retries=max_retries,
        backoff_factor=0.0,
        backoff_max=0.0,
    )


def _request(user: str = "Where did they meet?", role: Role = Role.MANAGER) -> LlmRequest:
    return LlmRequest(model="test-model", user=user, role_tag=role)


@pytest.mark.asyncio
@respx.mock
async def test_http_backend_posts_chat_payload() -> None:
    route = respx.post(COMPLETIONS_URL).mock(
        return_value=httpx.Response(200, json=_completion("the garden"))
    )

    backend = _backend()
    response = await backend.complete(_request())
    await backend.aclose()

    assert response.text == "the garden"
    assert response.prompt_tokens == 12
    assert response.completion_tokens == 3
    sent = json.loads(route.calls.last.request.content)
    assert sent["model"] == "test-model"
    assert sent["messages"] == [{"role": "user", "content": "Where did they meet?"}]
    assert sent["temperature"] == 0.0
    assert route.calls.last.request.headers["Authorization"] == "Bearer sk-test"


@pytest.mark.asyncio
@respx.mock
async def test_http_backend_retries_on_500() -> None:
    route = respx.post(COMPLETIONS_URL).mock(
        side_effect=[
            httpx.Response(500, json={"error": {"message": "overloaded"}}),
            httpx.Response(200, json=_completion("ok")),
        ]
    )

    async with _backend() as backend:
        response = await backend.complete(_request())

    assert response.text == "ok"
    assert route.call_count == 2


@pytest.mark.asyncio
@respx.mock
async def test_http_backend_retries_transport_errors() -> None:
    route = respx.post(COMPLETIONS_URL).mock(
        side_effect=[httpx.ConnectError("boom"), httpx.Response(200, json=_completion("ok"))]
    )

    async with _backend() as backend:
        response = await backend.complete(_request())

    assert response.text == "ok"
    assert route.call_count == 2


@pytest.mark.asyncio
@respx.mock
async def test_http_backend_gives_up_with_transport_error() -> None:
    respx.post(COMPLETIONS_URL).mock(side_effect=httpx.ConnectError("boom"))

    async with _backend(max_retries=1) as backend:
        with pytest.raises(EngineException) as exc:
            await backend.complete(_request())

    assert exc.value.code == ErrorCode.TRANSPORT
    assert exc.value.error.details["attempts"] == 2
    assert exc.value.retryable


@pytest.mark.asyncio
@respx.mock
async def test_http_backend_maps_auth_errors() -> None:
    route = respx.post(COMPLETIONS_URL).mock(
        return_value=httpx.Response(
            401, json={"error": {"message": "bad key", "type": "invalid_request_error"}}
        )
    )

    async with _backend() as backend:
        with pytest.raises(EngineException) as exc:
            await backend.complete(_request())

    assert exc.value.code == ErrorCode.AUTH
    assert exc.value.error.details == {"status": 401, "type": "invalid_request_error"}
    assert route.call_count == 1


@pytest.mark.asyncio
@respx.mock
async def test_http_backend_maps_rate_limit_with_retry_after() -> None:
    respx.post(COMPLETIONS_URL).mock(
        return_value=httpx.Response(
            429, headers={"Retry-After": "0"}, json={"error": {"message": "slow down"}}
        )
    )

    async with _backend(max_retries=0) as backend:
        with pytest.raises(EngineException) as exc:
            await backend.complete(_request())

    assert exc.value.code == ErrorCode.RATE_LIMIT
    assert exc.value.error.retry_after == 0.0


@pytest.mark.asyncio
@respx.mock
async def test_http_backend_retries_rate_limit_then_succeeds() -> None:
    route = respx.post(COMPLETIONS_URL).mock(
        side_effect=[
            httpx.Response(
                429, headers={"Retry-After": "0"}, json={"error": {"message": "slow down"}}
            ),
            httpx.Response(200, json=_completion("ok")),
        ]
    )

    async with _backend() as backend:
        response = await backend.complete(_request())

    assert response.text == "ok"
    assert route.call_count == 2


@pytest.mark.asyncio
@respx.mock
async def test_http_backend_does_not_retry_client_errors() -> None:
    route = respx.post(COMPLETIONS_URL).mock(
        return_value=httpx.Response(400, json={"error": {"message": "bad request"}})
    )

    async with _backend() as backend:
        with pytest.raises(EngineException) as exc:
            await backend.complete(_request())

    assert exc.value.code == ErrorCode.PROVIDER
    assert not exc.value.retryable
    assert route.call_count == 1


@pytest.mark.asyncio
@respx.mock
async def test_http_backend_rejects_malformed_payload() -> None:
    respx.post(COMPLETIONS_URL).mock(return_value=httpx.Response(200, json={"choices": []}))

    async with _backend() as backend:
        with pytest.raises(EngineException) as exc:
            await backend.complete(_request())

    assert exc.value.code == ErrorCode.PROVIDER
    assert not exc.value.retryable


@pytest.mark.asyncio
@respx.mock
async def test_http_backend_check_lists_models() -> None:
    respx.get(f"{BASE_URL}/models").mock(return_value=httpx.Response(403, json={}))

    async with _backend() as backend:
        with pytest.raises(EngineException) as exc:
            await backend.check()

    assert exc.value.code == ErrorCode.AUTH


def test_backoff_delay_is_capped() -> None:
    strategy = BackoffStrategy(factor=0.5, maximum=2.0)
    assert 0.5 <= strategy.delay(0) <= 0.55
    assert 2.0 <= strategy.delay(10) <= 2.2


@pytest.mark.asyncio
async def test_complete_records_usage_in_ledger() -> None:
    backend = ScriptedBackend(["one two three"])
    ledger = UsageLedger()

    response = await complete(_request("a b", Role.EXTRACT), backend, ledger=ledger)

    assert response.prompt_tokens == 2
    assert response.completion_tokens == 3
    usage = ledger.snapshot()[Role.EXTRACT]
    assert (usage.calls, usage.prompt_tokens, usage.completion_tokens) == (1, 2, 3)
    assert ledger.total_calls == 1


@pytest.mark.asyncio
async def test_scripted_backend_serves_queue_then_responder() -> None:
    backend = ScriptedBackend(
        ["first", LlmResponse(text="second", prompt_tokens=7)],
        responder=lambda request: request.role_tag.value,
    )

    assert (await backend.complete(_request())).text == "first"
    assert (await backend.complete(_request())).prompt_tokens == 7
    assert (await backend.complete(_request(role=Role.REFINE))).text == "refine"
    assert backend.remaining == 0
    assert len(backend.requests) == 3


@pytest.mark.asyncio
async def test_scripted_backend_exhaustion() -> None:
    backend = ScriptedBackend(["only"])
    await backend.complete(_request())

    with pytest.raises(EngineException) as exc:
        await backend.complete(_request())
    assert exc.value.code == ErrorCode.SCRIPT_EXHAUSTED


def test_scripted_backend_from_jsonl(tmp_path) -> None:
    path = tmp_path / "replies.jsonl"
    path.write_text('"plain"\n\n{"text": "object"}\n', encoding="utf-8")
    assert ScriptedBackend.from_jsonl(path).remaining == 2

    path.write_text("not json\n", encoding="utf-8")
    with pytest.raises(EngineException) as exc:
        ScriptedBackend.from_jsonl(path)
    assert exc.value.code == ErrorCode.CONFIG
    assert exc.value.error.details["line"] == 1


@pytest.mark.asyncio
async def test_cassette_record_then_replay(tmp_path) -> None:
    path = tmp_path / "cassettes" / "run.jsonl"
    inner = ScriptedBackend(["alpha", "beta"])
    recorder = CassetteBackend(path, "record", inner=inner)
    first = await recorder.complete(_request("q1", Role.PLANNER))
    second = await recorder.complete(_request("q2", Role.EXTRACT))
    await recorder.aclose()

    entries = load_cassette(path)
    assert [entry.role_tag for entry in entries] == [Role.PLANNER, Role.EXTRACT]

    replay = CassetteBackend(path)
    assert await replay.complete(_request("q1", Role.PLANNER)) == first
    assert await replay.complete(_request("q2", Role.EXTRACT)) == second
    await replay.aclose()


@pytest.mark.asyncio
async def test_cassette_replay_detects_mismatch_and_exhaustion(tmp_path) -> None:
    path = tmp_path / "run.jsonl"
    recorder = CassetteBackend(path, "record", inner=ScriptedBackend(["alpha"]))
    await recorder.complete(_request("q1", Role.PLANNER))

    replay = CassetteBackend(path)
    with pytest.raises(EngineException) as exc:
        await replay.complete(_request("another prompt", Role.PLANNER))
    assert exc.value.code == ErrorCode.CASSETTE_MISMATCH

    replay = CassetteBackend(path)
    await replay.complete(_request("q1", Role.PLANNER))
    with pytest.raises(EngineException) as exc:
        await replay.complete(_request("q1", Role.PLANNER))
    assert exc.value.code == ErrorCode.CASSETTE_MISMATCH
    assert exc.value.error.details["position"] == 1


def test_cassette_requires_inner_for_recording(tmp_path) -> None:
    with pytest.raises(EngineException) as exc:
        CassetteBackend(tmp_path / "x.jsonl", "record")
    assert exc.value.code == ErrorCode.CONFIG

    with pytest.raises(EngineException) as exc:
        CassetteBackend(tmp_path / "missing.jsonl")
    assert exc.value.code == ErrorCode.CONFIG


def test_request_fingerprint_covers_role_model_and_prompt() -> None:
    base = _request("prompt", Role.EXTRACT)
    assert base.fingerprint() == _request("prompt", Role.EXTRACT).fingerprint()
    assert base.fingerprint() != _request("prompt", Role.INFER).fingerprint()
    assert base.fingerprint() != _request("other", Role.EXTRACT).fingerprint()
    assert base.fingerprint() != base.model_copy(update={"model": "m2"}).fingerprint()


@pytest.mark.asyncio
async def test_factory_requires_credentials_for_http() -> None:
    settings = load_settings(overrides={"llm": {"backend": "http"}})
    with pytest.raises(EngineException) as exc:
        await build_inner_backend(settings)
    assert exc.value.code == ErrorCode.CONFIG
    assert exc.value.error.details == {"has_api_key": False, "has_base_url": False}


@pytest.mark.asyncio
async def test_factory_builds_http_backend_from_env(monkeypatch) -> None:
    monkeypatch.setenv("LLM_API_KEY", "sk-env")
    monkeypatch.setenv("LLM_BASE_URL", BASE_URL + "/")
    settings = load_settings()

    backend = await build_inner_backend(settings)
    try:
        assert isinstance(backend, HttpChatBackend)
    finally:
        await backend.aclose()


@pytest.mark.asyncio
async def test_factory_scripted_and_cassette(tmp_path) -> None:
    replies = tmp_path / "replies.jsonl"
    replies.write_text('"hello"\n', encoding="utf-8")
    cassette = tmp_path / "run.jsonl"

    settings = load_settings(
        overrides={
            "llm": {
                "backend": "cassette",
                "cassette_mode": "record",
                "cassette_inner": "scripted",
                "cassette_path": str(cassette),
                "scripted_path": str(replies),
            }
        }
    )
    recorder = await build_backend(settings)
    assert isinstance(recorder, CassetteBackend)
    recorded = await recorder.complete(_request())
    await recorder.aclose()

    replay_settings = load_settings(
        overrides={"llm": {"backend": "cassette", "cassette_path": str(cassette)}}
    )
    replay = await build_backend(replay_settings)
    assert (await replay.complete(_request())).text == recorded.text == "hello"

    with pytest.raises(EngineException) as exc:
        await build_backend(load_settings(overrides={"llm": {"backend": "scripted"}}))
    assert exc.value.code == ErrorCode.CONFIG
