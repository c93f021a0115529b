"""Aggregate scored segments and token totals into an EvalReport and a table."""

from __future__ import annotations

import logging
from collections import defaultdict
from decimal import Decimal
from typing import Iterable, Sequence

from evals.stats import kendall_tau_b, pooled_pairwise_accuracy
from promptopt.errors import DegenerateInput, MissingBaseline, TooFewSystems
from promptopt.prompt_kit import estimate_cost
from promptopt.schemas import EvalReport, PromptKind, ScoredSegment

logger = logging.getLogger(__name__)


def per_lp_tau(
    segments: Sequence[ScoredSegment], lang_pairs: Iterable[str] = ()
) -> dict[str, float | None]:
    """Tau-b per language pair, pooled over all of its segments.

    Pairs with fewer than two segments or a constant side are reported as None.
    """
    grouped: dict[str, list[ScoredSegment]] = defaultdict(list)
    for seg in segments:
        grouped[seg.lang_pair].append(seg)
    taus: dict[str, float | None] = {}
    for lp in sorted(set(grouped) | set(lang_pairs)):
        group = grouped.get(lp, [])
        try:
            taus[lp] = kendall_tau_b(
                [s.metric_score for s in group], [s.human_score for s in group]
            )
        except DegenerateInput as e:
            logger.warning(f"[report] tau undefined for {lp}: {e}")
            taus[lp] = None
    return taus


def build_report(
    label: str,
    prompt_kind: PromptKind,
    counter_mode: str,
    segments: Sequence[ScoredSegment],
    total_tokens: int,
    baseline_label: str,
    baseline_tokens: int | None,
    price_per_million: Decimal | str | int = Decimal("10"),
    invalid_replies: int = 0,
    lang_pairs: Iterable[str] = (),
) -> EvalReport:
    if baseline_tokens is None:
        raise MissingBaseline(f"no token total for baseline {baseline_label!r}")
    if total_tokens <= 0 or baseline_tokens <= 0:
        raise DegenerateInput("token totals must be positive to compute a reduction rate")
    try:
        accuracy = pooled_pairwise_accuracy(segments) if segments else None
    except TooFewSystems as e:
        logger.warning(f"[report] pairwise accuracy undefined: {e}")
        accuracy = None
    return EvalReport(
        label=label,
        prompt_kind=prompt_kind,
        counter_mode=counter_mode,
        per_lp_tau=per_lp_tau(segments, lang_pairs),
        pairwise_accuracy=accuracy,
        total_tokens=total_tokens,
        baseline_label=baseline_label,
        baseline_tokens=baseline_tokens,
        reduction_rate=round(baseline_tokens / total_tokens, 2),
        estimated_cost=estimate_cost(total_tokens, price_per_million),
        segments=len(segments),
        invalid_replies=invalid_replies,
    )


def _fmt(value: float | None, digits: int = 4) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def render_table(reports: Sequence[EvalReport]) -> str:
    """Aligned text table: label, token usage, reduction, accuracy, one tau per pair."""
    lps = sorted({lp for r in reports for lp in r.per_lp_tau})
    header = ["Method", "Token Usage", "Reduction Rate", "Pairwise Accuracy"]
    header += [f"{lp} tau" for lp in lps]
    rows = [header]
    for r in reports:
        rows.append([
            r.label,
            f"{r.total_tokens:,}",
            f"{r.reduction_rate:.2f}x",
            _fmt(r.pairwise_accuracy),
            *(_fmt(r.per_lp_tau.get(lp)) for lp in lps),
        ])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for n, row in enumerate(rows):
        lines.append("  ".join(
            cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths))
        ).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
