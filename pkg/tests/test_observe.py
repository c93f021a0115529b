"""Tests for promptopt.observe against a stand-in Langfuse client."""

from unittest.mock import MagicMock, patch

import pytest

from promptopt import observe
from promptopt.compressor import OracleCompressor
from promptopt.graph import EvalDeps, run_evaluation
from promptopt.graph_state import RunSpec
from promptopt.judge import JudgeClient
from promptopt.run_config import load_run_config
from promptopt.schemas import JudgeRequest, JudgeResponse
from tools.synthetic_judge import SyntheticJudge


@pytest.fixture(autouse=True)
def _no_open_runs():
    observe._runs.clear()
    yield
    observe._runs.clear()


@pytest.fixture
def langfuse():
    fake = MagicMock()
    with patch("promptopt.observe._client", return_value=fake):
        yield fake


def _exchange():
    request = JudgeRequest.model_validate({
        "model": "m",
        "prompt": {"messages": [{"role": "system", "content": "s"}, {"role": "user", "content": "hi"}]},
        "record_key": "k",
    })
    return request, JudgeResponse(text="ok", prompt_tokens=3, completion_tokens=1, backend="mock")


async def _node(state):
    return {"quarantined": [1, 2]}


# ── Disabled ─────────────────────────────────────────────────────────────


class TestDisabled:
    async def test_everything_is_a_no_op(self):
        with patch("promptopt.observe._client", return_value=None):
            assert not observe.enabled()
            observe.start_run("run")
            assert observe._runs == {}
            assert await observe.traced_node(_node)({"trace_id": "run"}) == {"quarantined": [1, 2]}
            observe.log_judge_generation("run", *_exchange(), latency_ms=1.0)
            observe.end_run("run")


# ── Enabled ──────────────────────────────────────────────────────────────


class TestEnabled:
    async def test_evaluation_run_is_one_trace(self, langfuse, tmp_path, small_corpus):
        config = load_run_config(overrides={"judge.cache_dir": str(tmp_path / "cache")})
        deps = EvalDeps(
            client=JudgeClient(SyntheticJudge(small_corpus.records)),
            compressor=OracleCompressor(rate_set=config.compressor.rate_set),
            counter_mode="builtin_surface",
        )
        await run_evaluation(config, small_corpus.records, deps, RunSpec("gemba-mqm", "classic", compress=False))

        assert langfuse.start_span.call_args.kwargs["name"] == "evaluate:gemba-mqm"
        root = langfuse.start_span.return_value
        nodes = [c.kwargs["name"] for c in root.start_span.call_args_list]
        assert nodes == ["compress_node", "render_node", "judge_node", "score_node", "report_node"]
        assert root.start_generation.call_count == deps.client.backend_calls
        output = root.update.call_args.kwargs["output"]
        assert output["reduction_rate"] == 1.0
        root.end.assert_called_once()
        langfuse.flush.assert_called_once()
        assert observe._runs == {}

    async def test_node_failure_marks_span(self, langfuse):
        observe.start_run("run")
        span = langfuse.start_span.return_value.start_span.return_value

        async def broken(state):
            raise RuntimeError("boom")

        with pytest.raises(RuntimeError):
            await observe.traced_node(broken)({"trace_id": "run"})
        assert span.update.call_args.kwargs["level"] == "ERROR"
        span.end.assert_called_once()

    def test_generation_errors_are_swallowed(self, langfuse):
        observe.start_run("run")
        langfuse.start_span.return_value.start_generation.side_effect = RuntimeError("down")
        observe.log_judge_generation("run", *_exchange(), latency_ms=2.0)

    def test_generation_without_open_run_goes_to_client(self, langfuse):
        request, response = _exchange()
        observe.log_judge_generation("elsewhere", request, response, latency_ms=2.0)
        kwargs = langfuse.start_generation.call_args.kwargs
        assert kwargs["usage_details"] == {"input": 3, "output": 1}
        assert kwargs["metadata"]["record"] == "k"

    def test_run_without_report_is_an_error(self, langfuse):
        observe.start_run("run")
        observe.end_run("run")
        assert langfuse.start_span.return_value.update.call_args.kwargs["level"] == "ERROR"
