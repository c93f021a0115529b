from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Annotated, Any, TypedDict

from promptopt.schemas import (
    EvalReport,
    FewShotExample,
    JudgeRequest,
    JudgeResponse,
    PromptKind,
    Quarantined,
    ScoredSegment,
    SegmentRecord,
)


@dataclass(frozen=True)
class RunSpec:
    """One judged pass over the test corpus."""

    label: str
    prompt_kind: PromptKind
    compress: bool


class EvalState(TypedDict, total=False):
    # Inputs (set once at invocation)
    trace_id: str
    t0: float
    run: RunSpec
    config: Any  # RunConfig
    records: list[SegmentRecord]
    deps: Any  # EvalDeps: judge client, compressor, token counter
    baseline_tokens: int | None

    # Pipeline state (set by nodes)
    segments_in: dict[str, tuple[str, str, float]]  # record key -> (source, target, rate)
    fewshots: dict[float, list[FewShotExample]]
    requests: list[JudgeRequest]
    responses: dict[str, JudgeResponse]
    segments: list[ScoredSegment]
    invalid_replies: int
    total_tokens: int
    report: EvalReport

    # Per-record failures (parallel-safe)
    quarantined: Annotated[list[Quarantined], operator.add]
