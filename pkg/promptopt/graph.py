"""Evaluation pipeline as a linear LangGraph: compress -> render -> judge -> score -> report."""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass

from langgraph.graph import END, START, StateGraph

from evals.report import build_report
from promptopt import observe
from promptopt.compressor import Compressor, compress_text
from promptopt.graph_state import EvalState, RunSpec
from promptopt.judge import JudgeClient
from promptopt.preferences import judge_request
from promptopt.prompt_kit import fewshot_record, load_fewshots
from promptopt.schemas import (
    REFERENCE_RATE,
    FewShotExample,
    JudgeResponse,
    Quarantined,
    ScoredSegment,
    SegmentRecord,
)
from promptopt.scoring import score_reply
from promptopt.utils import derive_rng

logger = logging.getLogger(__name__)


@dataclass
class EvalDeps:
    client: JudgeClient
    compressor: Compressor
    counter_mode: str


# ── Helpers ──────────────────────────────────────────────────────────────


def _ts(t0: float) -> str:
    return f"+{time.time() - t0:.1f}s"


def _quarantine(key: str, exc: BaseException) -> Quarantined:
    logger.warning(f"[{key}] quarantined: {type(exc).__name__}: {exc}")
    return Quarantined(record_key=key, kind=type(exc).__name__, message=str(exc))


def _skipped(state: EvalState) -> set[str]:
    return {q.record_key for q in state.get("quarantined", [])}


def compress_fewshots(
    shots: list[FewShotExample], rate: float, seed: int
) -> list[FewShotExample]:
    """Compress each example at ``rate``, protecting the spans its reply quotes."""
    out = []
    for i, shot in enumerate(shots):
        record = fewshot_record(shot, i)
        rng = derive_rng(seed, f"fewshot/{i}/{rate!r}")
        source_spans = [s for s in record.spans if s.side == "source"]
        target_spans = [s for s in record.spans if s.side == "target"]
        source = compress_text(shot.source_seg, source_spans, rate, rng)
        target = compress_text(shot.target_seg, target_spans, rate, rng)
        out.append(shot.model_copy(update={
            "source_seg": source.compressed, "target_seg": target.compressed,
        }))
    return out


# ── Node functions ───────────────────────────────────────────────────────


async def compress_node(state: EvalState) -> dict:
    t0, trace_id = state["t0"], state["trace_id"]
    run, config, deps = state["run"], state["config"], state["deps"]
    logger.info(f"[{trace_id}] [{_ts(t0)}] compress START ({len(state['records'])} records)")

    async def one(record: SegmentRecord):
        if not run.compress:
            return record.key, (record.source, record.target, REFERENCE_RATE)
        rng = derive_rng(config.seed, f"eval/{record.key}")
        try:
            example = await deps.compressor.compress(record, rng, config.compressor.fixed_rate)
        except Exception as e:
            return record.key, _quarantine(record.key, e)
        if example.rate == REFERENCE_RATE:
            return record.key, (record.source, record.target, REFERENCE_RATE)
        return record.key, (
            example.compressed_source.compressed, example.compressed_target.compressed, example.rate,
        )

    results = await asyncio.gather(*(one(r) for r in state["records"]))
    segments_in = {k: v for k, v in results if isinstance(v, tuple)}
    quarantined = [v for _, v in results if isinstance(v, Quarantined)]

    base = load_fewshots(config.fewshot_count)
    fewshots: dict[float, list[FewShotExample]] = {}
    for rate in sorted({rate for _, _, rate in segments_in.values()}):
        if rate == REFERENCE_RATE or not config.compressor.compress_fewshots:
            fewshots[rate] = base
        else:
            fewshots[rate] = compress_fewshots(base, rate, config.seed)

    logger.info(f"[{trace_id}] [{_ts(t0)}] compress DONE ({len(quarantined)} quarantined)")
    return {"segments_in": segments_in, "fewshots": fewshots, "quarantined": quarantined}


async def render_node(state: EvalState) -> dict:
    run, config = state["run"], state["config"]
    skipped = _skipped(state)
    requests = []
    quarantined = []
    for record in state["records"]:
        if record.key in skipped:
            continue
        source_seg, target_seg, rate = state["segments_in"][record.key]
        try:
            requests.append(judge_request(
                record, source_seg, target_seg, run.prompt_kind, state["fewshots"][rate],
                model=config.judge.model,
                temperature=config.judge.temperature,
                max_output_tokens=config.judge.max_output_tokens,
            ))
        except Exception as e:
            quarantined.append(_quarantine(record.key, e))
    return {"requests": requests, "quarantined": quarantined}


async def judge_node(state: EvalState) -> dict:
    t0, trace_id = state["t0"], state["trace_id"]
    client = state["deps"].client
    requests = state["requests"]
    calls_before = client.backend_calls
    logger.info(f"[{trace_id}] [{_ts(t0)}] judge START ({len(requests)} requests)")

    results = await client.complete_many(requests, return_exceptions=True)
    responses: dict[str, JudgeResponse] = {}
    quarantined = []
    for request, result in zip(requests, results):
        if isinstance(result, BaseException):
            quarantined.append(_quarantine(request.record_key, result))
        else:
            responses[request.record_key] = result

    logger.info(
        f"[{trace_id}] [{_ts(t0)}] judge DONE: {len(responses)}/{len(requests)} answered, "
        f"{client.backend_calls - calls_before} backend calls"
    )
    return {"responses": responses, "quarantined": quarantined}


async def score_node(state: EvalState) -> dict:
    run, scoring = state["run"], state["config"].scoring
    responses = state["responses"]
    segments: list[ScoredSegment] = []
    quarantined = []
    invalid = 0
    for record in state["records"]:
        response = responses.get(record.key)
        if response is None:
            continue
        if record.human_score is None:
            quarantined.append(_quarantine(record.key, ValueError("record has no human score")))
            continue
        score = score_reply(response, run.prompt_kind, scoring.weights, scoring.fallback)
        if not score.valid:
            invalid += 1
            if scoring.skip_invalid:
                continue
        segments.append(ScoredSegment(
            lang_pair=record.lang_pair,
            system_id=record.system_id,
            doc_id=record.doc_id,
            seg_id=record.seg_id,
            metric_score=score.value,
            human_score=record.human_score,
            prompt_tokens=response.prompt_tokens,
            valid=score.valid,
        ))
    total = sum(r.prompt_tokens for r in responses.values())
    return {
        "segments": segments,
        "invalid_replies": invalid,
        "total_tokens": total,
        "quarantined": quarantined,
    }


async def report_node(state: EvalState) -> dict:
    t0, trace_id = state["t0"], state["trace_id"]
    run, config = state["run"], state["config"]
    baseline_tokens = state.get("baseline_tokens")
    baseline_label = config.baseline_label
    if baseline_tokens is None:
        # A run without a baseline is the baseline.
        baseline_tokens, baseline_label = state["total_tokens"], run.label

    report = build_report(
        label=run.label,
        prompt_kind=run.prompt_kind,
        counter_mode=state["deps"].counter_mode,
        segments=state["segments"],
        total_tokens=state["total_tokens"],
        baseline_label=baseline_label,
        baseline_tokens=baseline_tokens,
        price_per_million=config.price_per_million,
        invalid_replies=state["invalid_replies"],
        lang_pairs={r.lang_pair for r in state["records"]},
    )
    logger.info(
        f"[{trace_id}] [{_ts(t0)}] report DONE: {report.total_tokens} tokens, "
        f"reduction {report.reduction_rate:.2f}x, {len(state.get('quarantined', []))} quarantined"
    )
    return {"report": report}


# ── Graph construction ──────────────────────────────────────────────────


def build_graph():
    builder = StateGraph(EvalState)

    builder.add_node("compress_node", observe.traced_node(compress_node))
    builder.add_node("render_node", observe.traced_node(render_node))
    builder.add_node("judge_node", observe.traced_node(judge_node))
    builder.add_node("score_node", observe.traced_node(score_node))
    builder.add_node("report_node", observe.traced_node(report_node))

    builder.add_edge(START, "compress_node")
    builder.add_edge("compress_node", "render_node")
    builder.add_edge("render_node", "judge_node")
    builder.add_edge("judge_node", "score_node")
    builder.add_edge("score_node", "report_node")
    builder.add_edge("report_node", END)

    return builder.compile()


graph = build_graph()


async def run_evaluation(
    config,
    records: list[SegmentRecord],
    deps: EvalDeps,
    run: RunSpec,
    baseline_tokens: int | None = None,
) -> EvalState:
    """Run one pass of the evaluation graph and return its final state."""
    # Passes run one after another, so the shared client follows the current one.
    deps.client.trace_id = run.label
    observe.start_run(run.label, {"prompt_kind": run.prompt_kind, "compress": run.compress, "records": len(records)})
    state = None
    try:
        state = await graph.ainvoke({
            "trace_id": run.label,
            "t0": time.time(),
            "run": run,
            "config": config,
            "records": sorted(records, key=lambda r: r.key),
            "deps": deps,
            "baseline_tokens": baseline_tokens,
            "quarantined": [],
        })
        return state
    finally:
        observe.end_run(run.label, state.get("report") if state else None)
