from __future__ import annotations

import math
from decimal import Decimal
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Severity = Literal["minor", "major", "critical", "neutral"]
Side = Literal["source", "target"]
PromptKind = Literal["classic", "lite"]
Role = Literal["system", "user", "assistant"]
BackendName = Literal["http", "mock", "synthetic"]

_SEVERITIES = ("minor", "major", "critical")

DEFAULT_RATES: tuple[float, ...] = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
REFERENCE_RATE = 1.0
DEFAULT_LAMBDA = 0.1


def normalize_severity(value: object) -> str:
    """Lower-case known severities; anything else is neutral (weight 0)."""
    if isinstance(value, str) and value.strip().lower() in _SEVERITIES:
        return value.strip().lower()
    return "neutral"


# ── Corpus ───────────────────────────────────────────────────────────────


class ErrorSpan(BaseModel):
    model_config = ConfigDict(frozen=True)

    start: int = Field(..., ge=0)
    end: int = Field(..., ge=0)
    severity: Severity = "minor"
    category: str | None = None
    text: str = ""
    side: Side = "target"

    @field_validator("severity", mode="before")
    @classmethod
    def _normalize_severity(cls, v):
        return normalize_severity(v)

    @model_validator(mode="after")
    def _check_extent(self) -> ErrorSpan:
        if self.end < self.start:
            raise ValueError(f"span end {self.end} precedes start {self.start}")
        if len(self.text) != self.end - self.start:
            raise ValueError(
                f"span text length {len(self.text)} != {self.end - self.start}"
            )
        return self

    def matches(self, text: str) -> bool:
        return self.end <= len(text) and text[self.start:self.end] == self.text


class SegmentRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    lang_pair: str = Field(..., pattern=r"^[a-z]{2,3}-[a-z]{2,3}$")
    system_id: str = Field(..., min_length=1)
    doc_id: str = Field(..., min_length=1)
    seg_id: int
    source: str = Field(..., min_length=1)
    target: str = Field(..., min_length=1)
    reference: str | None = None
    spans: list[ErrorSpan] = Field(default_factory=list)
    human_score: float | None = None

    @model_validator(mode="after")
    def _spans_fit_text(self) -> SegmentRecord:
        for span in self.spans:
            text = self.source if span.side == "source" else self.target
            if not span.matches(text):
                raise ValueError(
                    f"{span.side} span [{span.start}, {span.end}) {span.text!r} "
                    f"does not match the {span.side} text"
                )
        return self

    @property
    def key(self) -> str:
        return f"{self.lang_pair}/{self.system_id}/{self.doc_id}/{self.seg_id}"

    @property
    def source_lang(self) -> str:
        return self.lang_pair.split("-")[0]

    @property
    def target_lang(self) -> str:
        return self.lang_pair.split("-")[1]


class RejectedRow(BaseModel):
    row: int
    kind: str
    message: str


class Corpus(BaseModel):
    records: list[SegmentRecord] = Field(default_factory=list)
    provenance: str = ""
    rejected: list[RejectedRow] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_keys(self) -> Corpus:
        seen: set[str] = set()
        for record in self.records:
            if record.key in seen:
                raise ValueError(f"duplicate record {record.key}")
            seen.add(record.key)
        return self

    def __len__(self) -> int:
        return len(self.records)


# ── Compression ──────────────────────────────────────────────────────────


class RateSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    rates: list[float] = Field(default_factory=lambda: list(DEFAULT_RATES))

    @field_validator("rates")
    @classmethod
    def _check_rates(cls, v: list[float]) -> list[float]:
        if not v:
            raise ValueError("rate set is empty")
        for r in v:
            if not 0.0 < r <= 1.0:
                raise ValueError(f"rate {r} outside (0, 1]")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("rates must be strictly increasing")
        if REFERENCE_RATE not in v:
            raise ValueError("rate set must contain 1.0")
        return v

    @classmethod
    def default(cls) -> RateSet:
        return cls(rates=list(DEFAULT_RATES))


class SurfaceToken(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    char_start: int = Field(..., ge=0)
    char_end: int
    protected: bool = False

    @model_validator(mode="after")
    def _non_empty(self) -> SurfaceToken:
        if self.char_end <= self.char_start:
            raise ValueError("token must cover at least one character")
        return self


class CompressedText(BaseModel):
    original: str
    compressed: str
    requested_rate: float = Field(..., gt=0.0, le=1.0)
    achieved_rate: float = Field(..., ge=0.0, le=1.0)
    total_tokens: int = Field(..., ge=1)
    kept_token_indices: list[int] = Field(default_factory=list)
    protected_token_indices: list[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_subsequence(self) -> CompressedText:
        kept = self.kept_token_indices
        if any(b <= a for a, b in zip(kept, kept[1:])):
            raise ValueError("kept_token_indices must be strictly increasing")
        if kept and (kept[0] < 0 or kept[-1] >= self.total_tokens):
            raise ValueError("kept index out of range")
        if not math.isclose(self.achieved_rate, len(kept) / self.total_tokens):
            raise ValueError("achieved_rate must equal kept / total tokens")
        missing = set(self.protected_token_indices) - set(kept)
        if missing:
            raise ValueError(f"protected tokens dropped: {sorted(missing)}")
        return self


class CompressionExample(BaseModel):
    record_key: str
    rate: float = Field(..., gt=0.0, le=1.0)
    source_spans: list[str] = Field(default_factory=list)
    target_spans: list[str] = Field(default_factory=list)
    compressed_source: CompressedText
    compressed_target: CompressedText
    prompt_text: str
    completion_text: str
    seed: int

    @model_validator(mode="after")
    def _completion_reparses(self) -> CompressionExample:
        from promptopt.compressor import parse_sft_completion

        parsed = parse_sft_completion(self.completion_text)
        if (
            parsed.rate != self.rate
            or parsed.source_spans != self.source_spans
            or parsed.target_spans != self.target_spans
            or parsed.compressed_source != self.compressed_source.compressed
            or parsed.compressed_target != self.compressed_target.compressed
        ):
            raise ValueError(f"[{self.record_key}] completion does not re-parse to its fields")
        return self


class SftCompletion(BaseModel):
    """Fields recovered from a compression completion."""

    rate: float
    source_spans: list[str] = Field(default_factory=list)
    target_spans: list[str] = Field(default_factory=list)
    compressed_source: str = ""
    compressed_target: str = ""


# ── Prompts ──────────────────────────────────────────────────────────────


class ChatMessage(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Role
    content: str


class ChatPrompt(BaseModel):
    messages: list[ChatMessage] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_roles(self) -> ChatPrompt:
        # An empty prompt is allowed so that token accounting can start from zero.
        if not self.messages:
            return self
        roles = [m.role for m in self.messages]
        if roles[0] != "system":
            raise ValueError("first message must be the system message")
        if roles[-1] != "user":
            raise ValueError("last message must be a user message")
        for i, role in enumerate(roles[1:]):
            expected = "user" if i % 2 == 0 else "assistant"
            if role != expected:
                raise ValueError(f"message {i + 1} should be {expected}, got {role}")
        return self


class PromptTarget(BaseModel):
    source_lang: str
    target_lang: str
    source_seg: str
    target_seg: str


class FewShotExample(BaseModel):
    source_lang: str
    target_lang: str
    source_seg: str
    target_seg: str
    assistant_reply_classic: str
    assistant_reply_lite_json: str

    @model_validator(mode="after")
    def _replies_parse(self) -> FewShotExample:
        from promptopt.scoring import parse_classic, parse_lite_json

        if not parse_classic(self.assistant_reply_classic).valid:
            raise ValueError("classic few-shot reply does not parse")
        if not parse_lite_json(self.assistant_reply_lite_json).valid:
            raise ValueError("lite few-shot reply does not parse")
        return self


# ── Judge ────────────────────────────────────────────────────────────────


class JudgeRequest(BaseModel):
    model: str
    prompt: ChatPrompt
    temperature: float = Field(default=0.0, ge=0.0)
    max_output_tokens: int = Field(default=512, gt=0)
    response_format: Literal["text", "json"] = "text"
    # Routing metadata for offline backends; never part of the cache key.
    record_key: str | None = None


class JudgeResponse(BaseModel):
    text: str
    prompt_tokens: int = Field(default=0, ge=0)
    completion_tokens: int = Field(default=0, ge=0)
    backend: BackendName
    cached: bool = False


class SyntheticNoise(BaseModel):
    span_drop_prob: float = Field(default=0.0, ge=0.0, le=1.0)
    severity_flip_prob: float = Field(default=0.0, ge=0.0, le=1.0)


# ── Scoring ──────────────────────────────────────────────────────────────


class ErrorItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    category: str
    span_text: str | None = None


class ParsedErrors(BaseModel):
    critical: list[ErrorItem] = Field(default_factory=list)
    major: list[ErrorItem] = Field(default_factory=list)
    minor: list[ErrorItem] = Field(default_factory=list)
    raw: str = ""
    valid: bool = True

    @model_validator(mode="after")
    def _invalid_is_empty(self) -> ParsedErrors:
        if not self.valid and (self.critical or self.major or self.minor):
            raise ValueError("invalid ParsedErrors must carry no errors")
        return self


class SeverityWeights(BaseModel):
    minor: float = 1.0
    major: float = 5.0
    critical: float = 10.0
    cap: float = 25.0

    @model_validator(mode="after")
    def _ordered(self) -> SeverityWeights:
        if not 0.0 <= self.minor <= self.major <= self.critical:
            raise ValueError("weights must satisfy 0 <= minor <= major <= critical")
        if self.cap <= 0:
            raise ValueError("cap must be positive")
        return self


class PenaltyBreakdown(BaseModel):
    minor_count: int = 0
    major_count: int = 0
    critical_count: int = 0


class MqmScore(BaseModel):
    value: float = Field(..., le=0.0)
    penalty_breakdown: PenaltyBreakdown = Field(default_factory=PenaltyBreakdown)
    valid: bool = True


# ── Preferences ──────────────────────────────────────────────────────────


class RateOutcome(BaseModel):
    score: MqmScore
    completion_text: str
    compressed_source: CompressedText
    compressed_target: CompressedText


class RateScores(BaseModel):
    record_key: str
    per_rate: dict[float, RateOutcome]

    @model_validator(mode="after")
    def _has_reference(self) -> RateScores:
        if REFERENCE_RATE not in self.per_rate:
            raise ValueError("scores must include the reference rate 1.0")
        return self


class PreferenceChoice(BaseModel):
    rate: float
    completion: str


class PreferenceRecord(BaseModel):
    record_key: str
    prompt_text: str
    chosen: PreferenceChoice
    rejected: PreferenceChoice
    deltas: dict[float, float]
    reference_score: float

    @model_validator(mode="after")
    def _deltas_bracketed(self) -> PreferenceRecord:
        if self.deltas.get(REFERENCE_RATE) != 0.0:
            raise ValueError("delta at the reference rate must be 0")
        for side, choice in (("chosen", self.chosen), ("rejected", self.rejected)):
            if choice.rate not in self.deltas:
                raise ValueError(f"{side} rate {choice.rate} has no delta")
        lo = self.deltas[self.chosen.rate]
        hi = self.deltas[self.rejected.rate]
        if any(d < lo or d > hi for d in self.deltas.values()):
            raise ValueError("chosen/rejected deltas must bracket every delta")
        return self


class Quarantined(BaseModel):
    record_key: str
    kind: str
    message: str


# ── ORPO ─────────────────────────────────────────────────────────────────


class OrpoTerms(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    l_sft: float = Field(..., ge=0.0)
    l_or: float = Field(..., gt=0.0)
    l_orpo: float
    lam: float = Field(default=DEFAULT_LAMBDA, ge=0.0, alias="lambda")
    odds_chosen: float = Field(..., gt=0.0)
    odds_rejected: float = Field(..., gt=0.0)


class PairLogprobs(BaseModel):
    """Token log-probs a model assigns to one pair's completions, plus its SFT loss."""

    record_key: str
    chosen_logprobs: list[float] = Field(..., min_length=1)
    rejected_logprobs: list[float] = Field(..., min_length=1)
    l_sft: float = Field(default=0.0, ge=0.0)

    @field_validator("chosen_logprobs", "rejected_logprobs")
    @classmethod
    def _non_positive(cls, v: list[float]) -> list[float]:
        if any(not math.isfinite(lp) or lp > 0.0 for lp in v):
            raise ValueError("token log-probs must be finite and <= 0")
        return v


class OrpoValidation(BaseModel):
    lam: float = Field(..., ge=0.0)
    length_normalized: bool = True
    logprobs_path: str | None = None
    # True when no log-probs were supplied and every pair was scored at p_c = p_r = 0.5.
    uniform: bool = False
    pairs_validated: int = 0
    missing: list[str] = Field(default_factory=list)
    mean_l_or: float | None = None
    mean_l_orpo: float | None = None
    per_record: dict[str, OrpoTerms] = Field(default_factory=dict)


class PreferenceRunReport(BaseModel):
    records_in: int = 0
    emitted: int = 0
    skipped: dict[str, str] = Field(default_factory=dict)
    quarantined: list[Quarantined] = Field(default_factory=list)
    orpo: OrpoValidation | None = None


# ── Evaluation ───────────────────────────────────────────────────────────


class ScoredSegment(BaseModel):
    lang_pair: str
    system_id: str
    doc_id: str = ""
    seg_id: int
    metric_score: float = Field(..., le=0.0)
    human_score: float
    prompt_tokens: int = Field(default=0, ge=0)
    valid: bool = True


class SystemScore(BaseModel):
    metric_mean: float
    human_mean: float


class EvalReport(BaseModel):
    label: str
    prompt_kind: PromptKind
    counter_mode: str
    per_lp_tau: dict[str, float | None] = Field(default_factory=dict)
    pairwise_accuracy: float | None = Field(default=None, ge=0.0, le=1.0)
    total_tokens: int = Field(..., ge=0)
    baseline_label: str
    baseline_tokens: int = Field(..., ge=0)
    reduction_rate: float = Field(..., gt=0.0)
    estimated_cost: Decimal
    segments: int = 0
    invalid_replies: int = 0

    @field_validator("per_lp_tau")
    @classmethod
    def _tau_range(cls, v: dict[str, float | None]) -> dict[str, float | None]:
        for lp, tau in v.items():
            if tau is not None and not -1.0 - 1e-12 <= tau <= 1.0 + 1e-12:
                raise ValueError(f"tau for {lp} outside [-1, 1]: {tau}")
        return v
