"""Parse judge replies (classic text and lite JSON) and compute MQM scores.

Parsers are total: any input yields a ParsedErrors, with ``valid=False``
when the reply cannot be read as an error list.
"""

from __future__ import annotations

import json
import logging
import re

from pydantic import BaseModel, ConfigDict, Field

from promptopt.schemas import (
    ErrorItem,
    JudgeResponse,
    MqmScore,
    ParsedErrors,
    PenaltyBreakdown,
    PromptKind,
    SeverityWeights,
)

logger = logging.getLogger(__name__)

SECTIONS = ("critical", "major", "minor")
NO_ERROR = "no-error"
DEFAULT_FALLBACK = -25.0


class ScoringConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    weights: SeverityWeights = Field(default_factory=SeverityWeights)
    fallback: float = Field(default=DEFAULT_FALLBACK, le=0.0)
    skip_invalid: bool = False


def _invalid(raw: str) -> ParsedErrors:
    return ParsedErrors(raw=raw, valid=False)


def _finalize(sections: dict[str, list[ErrorItem]], raw: str) -> ParsedErrors:
    # Non-translation has no weight of its own; it is scored as critical.
    for name in ("major", "minor"):
        moved = [e for e in sections[name] if "non-translation" in e.category.lower()]
        if moved:
            sections[name] = [e for e in sections[name] if e not in moved]
            sections["critical"].extend(moved)
    return ParsedErrors(**sections, raw=raw, valid=True)


# ── Classic ──────────────────────────────────────────────────────────────

_HEADER_RE = re.compile(r"^(critical|major|minor)\s*:\s*(.*)$", re.IGNORECASE)
_ITEM_RE = re.compile(r'^(?P<cat>[^"]+?)\s*-\s*"(?P<span>.*)"\s*\.?$')
_BARE_RE = re.compile(r"^[A-Za-z][A-Za-z /()_!-]{0,80}$")


def _classic_item(line: str) -> ErrorItem | None:
    m = _ITEM_RE.match(line)
    if m:
        return ErrorItem(category=m.group("cat").strip(), span_text=m.group("span"))
    if _BARE_RE.match(line):
        return ErrorItem(category=line.strip())
    return None


def parse_classic(text: str) -> ParsedErrors:
    sections: dict[str, list[ErrorItem]] = {name: [] for name in SECTIONS}
    current: str | None = None
    seen_header = False
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line:
            continue
        header = _HEADER_RE.match(line)
        if header:
            current = header.group(1).lower()
            seen_header = True
            line = header.group(2).strip()
            if not line:
                continue
        if current is None:
            return _invalid(text)
        if line.lower() == NO_ERROR:
            continue
        item = _classic_item(line)
        if item is None:
            return _invalid(text)
        sections[current].append(item)
    if not seen_header:
        return _invalid(text)
    return _finalize(sections, text)


# ── Lite JSON ────────────────────────────────────────────────────────────

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL | re.IGNORECASE)


def _lite_item(item: object) -> ErrorItem | None | bool:
    """Returns an ErrorItem, None for "no-error", or False when unreadable."""
    if isinstance(item, str):
        if item.strip().lower() == NO_ERROR:
            return None
        return ErrorItem(category=item.strip()) if item.strip() else False
    if isinstance(item, dict) and len(item) == 1:
        (category, span), = item.items()
        if span is None or isinstance(span, str):
            return ErrorItem(category=str(category).strip(), span_text=span)
    return False


def parse_lite_json(text: str) -> ParsedErrors:
    body = text.strip()
    fenced = _FENCE_RE.search(body)
    if fenced:
        body = fenced.group(1).strip()
    try:
        obj = json.loads(body)
    except (json.JSONDecodeError, RecursionError):
        return _invalid(text)
    if not isinstance(obj, dict) or not any(k in obj for k in SECTIONS):
        return _invalid(text)

    sections: dict[str, list[ErrorItem]] = {name: [] for name in SECTIONS}
    for name in SECTIONS:
        entries = obj.get(name, [])
        if not isinstance(entries, list):
            return _invalid(text)
        for entry in entries:
            item = _lite_item(entry)
            if item is False:
                return _invalid(text)
            if item is not None:
                sections[name].append(item)
    return _finalize(sections, text)


def parse_reply(text: str, kind: PromptKind) -> ParsedErrors:
    return parse_lite_json(text) if kind == "lite" else parse_classic(text)


# ── Canonical rendering ──────────────────────────────────────────────────


def _classic_line(item: ErrorItem) -> str:
    if item.span_text is None:
        return item.category
    return f'{item.category} - "{item.span_text.replace(chr(10), " ")}"'


def render_classic(errors: ParsedErrors) -> str:
    lines: list[str] = []
    for name in SECTIONS:
        lines.append(f"{name.capitalize()}:")
        items = getattr(errors, name)
        if items:
            lines.extend(_classic_line(e) for e in items)
        else:
            lines.append(NO_ERROR)
    return "\n".join(lines)


def render_lite(errors: ParsedErrors) -> str:
    payload: dict[str, list] = {}
    for name in SECTIONS:
        items = [
            e.category if e.span_text is None else {e.category: e.span_text}
            for e in getattr(errors, name)
        ]
        if name == "critical" and not items:
            items = [NO_ERROR]
        payload[name] = items
    return json.dumps(payload, ensure_ascii=False)


# ── Scoring ──────────────────────────────────────────────────────────────


def mqm_score(
    errors: ParsedErrors,
    weights: SeverityWeights | None = None,
    fallback: float = DEFAULT_FALLBACK,
) -> MqmScore:
    weights = weights or SeverityWeights()
    breakdown = PenaltyBreakdown(
        minor_count=len(errors.minor),
        major_count=len(errors.major),
        critical_count=len(errors.critical),
    )
    if not errors.valid:
        return MqmScore(value=fallback, penalty_breakdown=PenaltyBreakdown(), valid=False)
    penalty = (
        breakdown.minor_count * weights.minor
        + breakdown.major_count * weights.major
        + breakdown.critical_count * weights.critical
    )
    return MqmScore(value=0.0 - min(weights.cap, penalty), penalty_breakdown=breakdown, valid=True)


def score_reply(
    reply: JudgeResponse,
    kind: PromptKind,
    weights: SeverityWeights | None = None,
    fallback: float = DEFAULT_FALLBACK,
) -> MqmScore:
    parsed = parse_reply(reply.text, kind)
    if not parsed.valid:
        logger.warning(f"[scoring] unparseable {kind} reply: {reply.text[:80]!r}")
    return mqm_score(parsed, weights, fallback)
