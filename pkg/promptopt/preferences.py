"""Preference pairs for the compressor: judge every rate, keep the extremes.

For each record the judge scores the prompt built from every compression
rate. ``delta_r = |s_r - s_1.0|``; the chosen completion has the smallest
delta (ties go to the lowest rate) and the rejected one the largest (ties go
to the highest rate). Since ``delta_1.0`` is always 0, chosen is in effect the
lowest rate whose score matches the uncompressed score.
"""

from __future__ import annotations

import asyncio
import logging
import random
from typing import Mapping

from config import JUDGE_MODEL
from promptopt.compressor import Compressor, OracleCompressor, render_sft_prompt
from promptopt.corpus import lang_name
from promptopt.errors import MissingReferenceRate
from promptopt.judge import JudgeClient
from promptopt.prompt_kit import render_prompt
from promptopt.schemas import (
    REFERENCE_RATE,
    Corpus,
    FewShotExample,
    JudgeRequest,
    JudgeResponse,
    MqmScore,
    PreferenceChoice,
    PreferenceRecord,
    PreferenceRunReport,
    PromptKind,
    PromptTarget,
    Quarantined,
    RateOutcome,
    RateScores,
    RateSet,
    SegmentRecord,
    SeverityWeights,
)
from promptopt.scoring import DEFAULT_FALLBACK, score_reply
from promptopt.utils import derive_rng

logger = logging.getLogger(__name__)


def judge_request(
    record: SegmentRecord,
    source_seg: str,
    target_seg: str,
    prompt_kind: PromptKind,
    fewshots: list[FewShotExample],
    model: str = JUDGE_MODEL,
    temperature: float = 0.0,
    max_output_tokens: int = 512,
) -> JudgeRequest:
    target = PromptTarget(
        source_lang=lang_name(record.source_lang),
        target_lang=lang_name(record.target_lang),
        source_seg=source_seg,
        target_seg=target_seg,
    )
    return JudgeRequest(
        model=model,
        prompt=render_prompt(prompt_kind, target, fewshots),
        temperature=temperature,
        max_output_tokens=max_output_tokens,
        response_format="json" if prompt_kind == "lite" else "text",
        record_key=record.key,
    )


async def score_all_rates(
    record: SegmentRecord,
    rate_set: RateSet,
    compressor: Compressor,
    judge: JudgeClient,
    prompt_kind: PromptKind = "classic",
    weights: SeverityWeights | None = None,
    rng: random.Random | None = None,
    model: str = JUDGE_MODEL,
    fewshots: list[FewShotExample] | None = None,
    fallback: float = DEFAULT_FALLBACK,
) -> RateScores:
    """Judge one compression per rate. Any failed rate fails the whole record."""
    rng = rng or random.Random(0)
    fewshots = fewshots or []

    examples = []
    for rate in rate_set.rates:
        example = await compressor.compress(record, rng, rate)
        if example.rate != rate:
            raise ValueError(f"compressor returned rate {example.rate} when asked for {rate}")
        examples.append(example)

    requests = []
    for example in examples:
        if example.rate == REFERENCE_RATE:
            source_seg, target_seg = record.source, record.target
        else:
            source_seg = example.compressed_source.compressed
            target_seg = example.compressed_target.compressed
        requests.append(judge_request(record, source_seg, target_seg, prompt_kind, fewshots, model))

    responses = await judge.complete_many(requests, return_exceptions=True)
    for response in responses:
        if isinstance(response, BaseException):
            raise response

    per_rate: dict[float, RateOutcome] = {}
    for example, response in zip(examples, responses):
        assert isinstance(response, JudgeResponse)
        per_rate[example.rate] = RateOutcome(
            score=score_reply(response, prompt_kind, weights, fallback),
            completion_text=example.completion_text,
            compressed_source=example.compressed_source,
            compressed_target=example.compressed_target,
        )
    return RateScores(record_key=record.key, per_rate=per_rate)


def deltas(scores: RateScores | Mapping[float, float | MqmScore]) -> dict[float, float]:
    if isinstance(scores, RateScores):
        values = {rate: outcome.score.value for rate, outcome in scores.per_rate.items()}
    else:
        values = {
            rate: s.value if isinstance(s, MqmScore) else float(s) for rate, s in scores.items()
        }
    if REFERENCE_RATE not in values:
        raise MissingReferenceRate(REFERENCE_RATE)
    reference = values[REFERENCE_RATE]
    return {rate: abs(value - reference) for rate, value in sorted(values.items())}


def select_pair(deltas: Mapping[float, float]) -> tuple[float, float]:
    """Return (chosen_rate, rejected_rate)."""
    if not deltas:
        raise ValueError("no deltas to choose from")
    chosen = min(deltas, key=lambda r: (deltas[r], r))
    rejected = max(deltas, key=lambda r: (deltas[r], r))
    return chosen, rejected


def _preference_record(record: SegmentRecord, scores: RateScores) -> PreferenceRecord | str:
    """Build the pair, or return the reason the record is skipped."""
    d = deltas(scores)
    chosen, rejected = select_pair(d)
    if chosen == rejected:
        return "single rate: chosen equals rejected"
    return PreferenceRecord(
        record_key=record.key,
        prompt_text=render_sft_prompt(record.source, record.target),
        chosen=PreferenceChoice(rate=chosen, completion=scores.per_rate[chosen].completion_text),
        rejected=PreferenceChoice(rate=rejected, completion=scores.per_rate[rejected].completion_text),
        deltas=d,
        reference_score=scores.per_rate[REFERENCE_RATE].score.value,
    )


async def build_preference_dataset(
    corpus: Corpus,
    judge: JudgeClient,
    rate_set: RateSet | None = None,
    prompt_kind: PromptKind = "classic",
    weights: SeverityWeights | None = None,
    fallback: float = DEFAULT_FALLBACK,
    seed: int = 0,
    span_protection: float = 0.5,
    drop_degenerate: bool = False,
    fewshots: list[FewShotExample] | None = None,
    model: str = JUDGE_MODEL,
    compressor: Compressor | None = None,
) -> tuple[list[PreferenceRecord], PreferenceRunReport]:
    """Score every record at every rate and emit preference pairs sorted by key.

    ``compressor`` defaults to the oracle at ``span_protection``; a supplied one
    must honour the requested rate. Failures are quarantined per record; the
    run never aborts on one record.
    """
    rate_set = rate_set or RateSet.default()
    if compressor is None:
        compressor = OracleCompressor(rate_set=rate_set, span_protection=span_protection, seed=seed)
    report = PreferenceRunReport(records_in=len(corpus))

    async def one(record: SegmentRecord) -> PreferenceRecord | str | Quarantined:
        try:
            scores = await score_all_rates(
                record, rate_set, compressor, judge, prompt_kind, weights,
                derive_rng(seed, record.key), model, fewshots, fallback,
            )
            built = _preference_record(record, scores)
        except Exception as e:
            logger.warning(f"[{record.key}] quarantined: {type(e).__name__}: {e}")
            return Quarantined(record_key=record.key, kind=type(e).__name__, message=str(e))
        if isinstance(built, PreferenceRecord) and drop_degenerate and not any(built.deltas.values()):
            return "degenerate: every delta is 0"
        return built

    records = sorted(corpus.records, key=lambda r: r.key)
    outcomes = await asyncio.gather(*(one(r) for r in records))

    emitted: list[PreferenceRecord] = []
    for record, outcome in zip(records, outcomes):
        if isinstance(outcome, PreferenceRecord):
            emitted.append(outcome)
        elif isinstance(outcome, Quarantined):
            report.quarantined.append(outcome)
        else:
            logger.info(f"[{record.key}] skipped: {outcome}")
            report.skipped[record.key] = outcome
    report.emitted = len(emitted)
    logger.info(
        f"[preferences] {report.records_in} in, {report.emitted} emitted, "
        f"{len(report.skipped)} skipped, {len(report.quarantined)} quarantined"
    )
    return emitted, report
