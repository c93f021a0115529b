"""Tests for the judge stack: disk cache, client, http/mock/synthetic backends,
the backend registry and the endpoint compressor.

HTTP backends run against httpx.MockTransport; nothing touches the network.
"""

import asyncio
import json
import random

import httpx
import pytest

import tools  # noqa: F401  registers judge backends
from promptopt.cache import JudgeCache, cache_key
from promptopt.errors import (
    AuthError,
    BackendUnavailable,
    BadRequest,
    ConfigError,
    ExhaustedRetries,
    GrammarError,
)
from promptopt.judge import JudgeClient
from promptopt.judge_protocol import JudgeBackend, registry
from promptopt.preferences import judge_request
from promptopt.prompt_kit import TokenCounter, count_tokens, load_fewshots
from promptopt.schemas import (
    ChatMessage,
    ChatPrompt,
    ErrorSpan,
    JudgeRequest,
    JudgeResponse,
    SyntheticNoise,
)
from promptopt.scoring import parse_classic, parse_lite_json, score_reply
from tests.conftest import span_of
from tools.endpoint_compressor import EndpointCompressor
from tools.http_judge import HttpJudge
from tools.mock_judge import NO_ERROR_CLASSIC, NO_ERROR_LITE, MockJudge
from tools.synthetic_judge import SyntheticJudge, synthetic_judge


# ── Mock data ────────────────────────────────────────────────────────────


def _request(record, kind="classic", source=None, target=None, fewshots=None):
    return judge_request(
        record,
        record.source if source is None else source,
        record.target if target is None else target,
        kind,
        fewshots or [],
        model="test-model",
    )


def _completion(content, prompt_tokens=120, completion_tokens=9):
    return {
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


class SlowBackend:
    """Counts calls and the peak number of overlapping calls."""

    name = "mock"

    def __init__(self, delay=0.01, fail=None):
        self.delay = delay
        self.fail = fail
        self.calls = 0
        self.active = 0
        self.peak = 0

    async def complete(self, request):
        self.calls += 1
        self.active += 1
        self.peak = max(self.peak, self.active)
        try:
            await asyncio.sleep(self.delay)
            if self.fail is not None:
                raise self.fail
            return JudgeResponse(text=NO_ERROR_CLASSIC, prompt_tokens=10, backend="mock")
        finally:
            self.active -= 1


# ── Fixtures ─────────────────────────────────────────────────────────────


@pytest.fixture
def cache(tmp_path):
    return JudgeCache(tmp_path / "cache")


@pytest.fixture
def record(two_minor_record):
    return two_minor_record


# ── Cache ────────────────────────────────────────────────────────────────


class TestCacheKey:
    def test_ignores_routing_metadata(self, record):
        request = _request(record)
        assert cache_key(request) == cache_key(request.model_copy(update={"record_key": "other"}))

    def test_sensitive_to_reply_inputs(self, record):
        request = _request(record)
        assert cache_key(request) != cache_key(request.model_copy(update={"temperature": 0.7}))
        assert cache_key(request) != cache_key(request.model_copy(update={"model": "other"}))
        assert cache_key(request) != cache_key(_request(record, kind="lite"))

    def test_is_sha256_hex(self, record):
        key = cache_key(_request(record))
        assert len(key) == 64
        int(key, 16)


class TestJudgeCache:
    async def test_set_get_delete(self, cache):
        key = "ab" + "0" * 62
        assert await cache.get(key) is None
        await cache.set(key, {"text": "x"})
        assert cache.path_for(key) == cache.cache_dir / "ab" / f"{key}.json"
        assert await cache.get(key) == {"text": "x"}
        await cache.delete(key)
        assert await cache.get(key) is None

    async def test_stats_and_clear(self, cache):
        for i in range(3):
            await cache.set(f"{i:02d}" + "f" * 62, {"text": str(i)})
        stats = cache.stats()
        assert stats.entries == 3
        assert stats.bytes > 0
        assert cache.clear() == 3
        assert cache.stats().entries == 0

    async def test_unreadable_entry_is_a_miss(self, cache):
        key = "cd" + "1" * 62
        path = cache.path_for(key)
        path.parent.mkdir(parents=True)
        path.write_text("{torn", encoding="utf-8")
        assert await cache.get(key) is None


# ── JudgeClient ──────────────────────────────────────────────────────────


class TestJudgeClient:
    async def test_cache_hit_skips_backend(self, record, cache):
        backend = MockJudge()
        client = JudgeClient(backend, cache)
        first = await client.complete(_request(record))
        second = await client.complete(_request(record))
        assert backend.calls == 1
        assert client.backend_calls == 1
        assert not first.cached and second.cached
        assert second.text == first.text
        assert second.prompt_tokens == first.prompt_tokens

    async def test_cache_shared_across_clients(self, record, cache):
        await JudgeClient(MockJudge(), cache).complete(_request(record))
        backend = MockJudge()
        client = JudgeClient(backend, cache)
        assert (await client.complete(_request(record))).cached
        assert backend.calls == 0

    async def test_inflight_dedup(self, record):
        backend = SlowBackend()
        client = JudgeClient(backend)
        results = await client.complete_many([_request(record)] * 5)
        assert backend.calls == 1
        assert sum(not r.cached for r in results) == 1

    async def test_bounded_concurrency(self, make_record):
        backend = SlowBackend()
        client = JudgeClient(backend, max_concurrency=2)
        records = [make_record(seg_id=i, target=f"Satz Nummer {i}.") for i in range(6)]
        await client.complete_many([_request(r) for r in records])
        assert backend.calls == 6
        assert backend.peak <= 2

    async def test_errors_propagate_and_are_not_cached(self, record, cache):
        client = JudgeClient(SlowBackend(fail=BadRequest("nope")), cache)
        results = await client.complete_many([_request(record)], return_exceptions=True)
        assert isinstance(results[0], BadRequest)
        assert cache.stats().entries == 0
        with pytest.raises(BadRequest):
            await client.complete(_request(record))

    def test_concurrency_must_be_positive(self):
        with pytest.raises(ValueError):
            JudgeClient(MockJudge(), max_concurrency=0)


# ── HTTP backend ─────────────────────────────────────────────────────────


def _http_judge(handler, **kwargs):
    return HttpJudge(
        base_url="https://judge.test/v1",
        api_key="sk-test",
        transport=httpx.MockTransport(handler),
        retry_base_delay=0.0,
        **kwargs,
    )


class TestHttpJudge:
    async def test_success(self, record):
        seen = []

        def handler(request):
            seen.append(request)
            return httpx.Response(200, json=_completion(NO_ERROR_LITE))

        judge = _http_judge(handler)
        response = await judge.complete(_request(record, kind="lite"))
        await judge.aclose()

        assert response.text == NO_ERROR_LITE
        assert (response.prompt_tokens, response.completion_tokens) == (120, 9)
        assert response.backend == "http"
        sent = seen[0]
        assert sent.url.path == "/v1/chat/completions"
        assert sent.headers["authorization"] == "Bearer sk-test"
        body = json.loads(sent.content)
        assert body["model"] == "test-model"
        assert body["response_format"] == {"type": "json_object"}
        assert body["max_tokens"] == 512
        assert body["messages"][-1]["role"] == "user"

    async def test_auth_error_not_retried(self, record):
        calls = []

        def handler(request):
            calls.append(request)
            return httpx.Response(401, json={"error": "bad key"})

        with pytest.raises(AuthError):
            await _http_judge(handler).complete(_request(record))
        assert len(calls) == 1

    async def test_rate_limit_retried(self, record):
        replies = [httpx.Response(429), httpx.Response(200, json=_completion(NO_ERROR_CLASSIC))]
        calls = []

        def handler(request):
            calls.append(request)
            return replies[len(calls) - 1]

        response = await _http_judge(handler).complete(_request(record))
        assert response.text == NO_ERROR_CLASSIC
        assert len(calls) == 2

    async def test_server_errors_exhaust_retries(self, record):
        calls = []

        def handler(request):
            calls.append(request)
            return httpx.Response(503)

        with pytest.raises(ExhaustedRetries):
            await _http_judge(handler, max_attempts=3).complete(_request(record))
        assert len(calls) == 3

    async def test_bad_request_not_retried(self, record):
        calls = []

        def handler(request):
            calls.append(request)
            return httpx.Response(400, json={"error": "context length"})

        with pytest.raises(BadRequest):
            await _http_judge(handler).complete(_request(record))
        assert len(calls) == 1

    async def test_non_json_body(self, record):
        judge = _http_judge(lambda request: httpx.Response(200, text="<html>"))
        with pytest.raises(BadRequest):
            await judge.complete(_request(record))

    async def test_missing_choices(self, record):
        judge = _http_judge(lambda request: httpx.Response(200, json={"choices": []}))
        with pytest.raises(BadRequest):
            await judge.complete(_request(record))

    def test_missing_key(self):
        with pytest.raises(BackendUnavailable):
            HttpJudge(base_url="https://judge.test/v1", api_key="")


# ── Mock backend ─────────────────────────────────────────────────────────


class TestMockJudge:
    async def test_default_reply_follows_format(self, record):
        judge = MockJudge()
        assert (await judge.complete(_request(record))).text == NO_ERROR_CLASSIC
        assert (await judge.complete(_request(record, kind="lite"))).text == NO_ERROR_LITE
        assert judge.calls == 2

    async def test_script_sequence_and_faults(self, record):
        judge = MockJudge(script=["a", BadRequest("boom")])
        assert (await judge.complete(_request(record))).text == "a"
        with pytest.raises(BadRequest):
            await judge.complete(_request(record))
        assert (await judge.complete(_request(record))).text == "a"

    async def test_callable_script_and_token_counts(self, record):
        counter = TokenCounter.builtin()
        judge = MockJudge(script=lambda req: req.record_key, counter=counter)
        request = _request(record)
        response = await judge.complete(request)
        assert response.text == record.key
        assert response.prompt_tokens == count_tokens(request.prompt, counter)

    def test_satisfies_protocol(self):
        assert isinstance(MockJudge(), JudgeBackend)


# ── Synthetic backend ────────────────────────────────────────────────────


class TestSyntheticJudge:
    async def test_uncompressed_reports_every_span(self, record):
        judge = SyntheticJudge([record])
        classic = await judge.complete(_request(record))
        lite = await judge.complete(_request(record, kind="lite"))
        assert score_reply(classic, "classic").value == -2.0
        assert score_reply(lite, "lite").value == -2.0
        assert classic.backend == "synthetic"

    async def test_dropped_tokens_hide_spans(self, record):
        judge = SyntheticJudge([record])
        response = await judge.complete(_request(record, target="Der hat Nahverkehr ."))
        parsed = parse_classic(response.text)
        assert [e.span_text for e in parsed.minor] == ["Nahverkehr"]

    @pytest.mark.parametrize("compressed,survives", [
        ("Der Rat hat gefragt .", False),
        ("Der hat den Rat gefragt .", True),
        ("Rat den Rat", True),
        ("Rat hat", False),
    ])
    async def test_span_checked_at_its_own_position(self, make_record, compressed, survives):
        target = "Der Rat hat den Rat gefragt."
        second = target.index("Rat", target.index("Rat") + 1)
        span = ErrorSpan(start=second, end=second + 3, severity="minor", category="fluency/grammar", text="Rat")
        record = make_record(target=target, spans=[span])
        response = await SyntheticJudge([record]).complete(_request(record, target=compressed))
        assert (score_reply(response, "classic").value == -1.0) is survives

    async def test_reply_quotes_spans_with_categories(self, record):
        response = await SyntheticJudge([record]).complete(_request(record, kind="lite"))
        parsed = parse_lite_json(response.text)
        assert [(e.category, e.span_text) for e in parsed.minor] == [
            ("fluency/grammar", "Rat"),
            ("terminology/inappropriate for context", "Nahverkehr"),
        ]

    async def test_neutral_spans_ignored(self, make_record):
        target = "Der Rat hat beschlossen."
        record = make_record(target=target, spans=[span_of(target, "Rat", severity="neutral")])
        response = await SyntheticJudge([record]).complete(_request(record))
        assert score_reply(response, "classic").value == 0.0

    def test_drop_noise(self, record):
        response = synthetic_judge(record, "classic", SyntheticNoise(span_drop_prob=1.0), random.Random(0))
        assert parse_classic(response.text).minor == []

    def test_flip_noise(self, record):
        response = synthetic_judge(record, "classic", SyntheticNoise(severity_flip_prob=1.0), random.Random(0))
        parsed = parse_classic(response.text)
        assert len(parsed.major) == 2 and parsed.minor == []

    def test_noise_is_seeded(self, small_corpus):
        noise = SyntheticNoise(span_drop_prob=0.5, severity_flip_prob=0.5)
        for rec in small_corpus.records:
            a = synthetic_judge(rec, "lite", noise, random.Random(rec.key))
            b = synthetic_judge(rec, "lite", noise, random.Random(rec.key))
            assert a == b

    async def test_prompt_tokens_counted(self, record):
        counter = TokenCounter.builtin()
        request = _request(record, fewshots=load_fewshots(3))
        response = await SyntheticJudge([record], counter=counter).complete(request)
        assert response.prompt_tokens == count_tokens(request.prompt, counter)

    async def test_unknown_record(self, record):
        with pytest.raises(BadRequest):
            await SyntheticJudge([]).complete(_request(record))

    async def test_unreadable_prompt(self, record):
        request = JudgeRequest(
            model="m",
            prompt=ChatPrompt(messages=[
                ChatMessage(role="system", content="s"),
                ChatMessage(role="user", content="free text"),
            ]),
            record_key=record.key,
        )
        with pytest.raises(BadRequest):
            await SyntheticJudge([record]).complete(request)

    async def test_add_records(self, record):
        judge = SyntheticJudge()
        judge.add_records([record])
        assert (await judge.complete(_request(record))).text


# ── Registry ─────────────────────────────────────────────────────────────


class TestRegistry:
    def test_known_backends(self):
        assert {"http", "mock", "synthetic"} <= set(registry.backend_names)

    def test_create(self, record):
        backend = registry.create("synthetic", records=[record], seed=1)
        assert isinstance(backend, SyntheticJudge)
        assert backend.seed == 1

    def test_unknown(self):
        with pytest.raises(ConfigError, match="unknown judge backend"):
            registry.create("carrier-pigeon")


# ── Endpoint compressor ──────────────────────────────────────────────────


class TestEndpointCompressor:
    async def test_falls_back_to_oracle(self, record):
        compressor = EndpointCompressor(base_url="")
        example = await compressor.compress(record, random.Random(0), 0.5)
        assert example.rate == 0.5
        assert "Rat" in example.compressed_target.compressed

    async def test_aligns_model_output(self, record):
        completion = (
            "Rate = 0.5\n"
            "Quality-relevant parts of Source: None\n"
            "Quality-relevant parts of Translation: [Rat]\n"
            "Compressed Source:```The council approved budget```\n"
            "Compressed MT:```Der Rat Haushalt erfunden```"
        )
        compressor = EndpointCompressor(
            base_url="https://compressor.test/v1",
            api_key="k",
            transport=httpx.MockTransport(lambda request: httpx.Response(200, json=_completion(completion))),
        )
        example = await compressor.compress(record, random.Random(0))
        await compressor.aclose()

        assert example.rate == 0.5
        assert example.target_spans == ["Rat"]
        assert example.compressed_source.kept_token_indices == [0, 1, 2, 5]
        assert example.compressed_target.compressed == "Der Rat Haushalt"
        assert example.completion_text.endswith("Compressed MT:```Der Rat Haushalt```")

    async def test_prefills_requested_rate(self, record):
        bodies = []

        def handler(request):
            bodies.append(json.loads(request.content))
            return httpx.Response(200, json=_completion(
                "Quality-relevant parts of Source: None\n"
                "Quality-relevant parts of Translation: [Rat]\n"
                "Compressed Source:```The council approved budget```\n"
                "Compressed MT:```Der Rat Haushalt```"
            ))

        compressor = EndpointCompressor(
            base_url="https://compressor.test/v1", api_key="k", transport=httpx.MockTransport(handler),
        )
        example = await compressor.compress(record, random.Random(0), rate=0.3)
        await compressor.aclose()

        assert bodies[0]["messages"][-1] == {"role": "assistant", "content": "Rate = 0.3\n"}
        assert bodies[0]["continue_final_message"] is True
        assert bodies[0]["add_generation_prompt"] is False
        assert example.rate == 0.3
        assert example.completion_text.startswith("Rate = 0.3\n")
        assert example.compressed_target.compressed == "Der Rat Haushalt"

    async def test_no_prefill_without_rate(self, record):
        bodies = []

        def handler(request):
            bodies.append(json.loads(request.content))
            return httpx.Response(200, json=_completion(
                "Rate = 0.9\nQuality-relevant parts of Source: None\n"
                "Quality-relevant parts of Translation: None\n"
                "Compressed Source:```The council```\nCompressed MT:```Der Rat```"
            ))

        compressor = EndpointCompressor(
            base_url="https://compressor.test/v1", api_key="k", transport=httpx.MockTransport(handler),
        )
        example = await compressor.compress(record, random.Random(0))
        await compressor.aclose()

        assert [m["role"] for m in bodies[0]["messages"]] == ["system", "user"]
        assert "continue_final_message" not in bodies[0]
        assert example.rate == 0.9

    async def test_unparseable_completion(self, record):
        compressor = EndpointCompressor(
            base_url="https://compressor.test/v1",
            api_key="k",
            transport=httpx.MockTransport(lambda request: httpx.Response(200, json=_completion("no idea"))),
        )
        with pytest.raises(GrammarError):
            await compressor.compress(record, random.Random(0))
