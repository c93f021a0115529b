"""The run document: one JSON file, validated, with command-line overrides.

Environment-level settings (endpoints, keys) stay in ``config.py``; this file
holds what a single run needs to be reproducible.
"""

from __future__ import annotations

import json
import logging
from decimal import Decimal
from pathlib import Path
from typing import Any, Literal, Mapping

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import JUDGE_CACHE_DIR, JUDGE_MODEL, MAX_CONCURRENCY
from promptopt.corpus import SidePolicy
from promptopt.errors import ConfigError, VocabError
from promptopt.prompt_kit import CounterMode, TokenCounter
from promptopt.schemas import DEFAULT_LAMBDA, BackendName, PromptKind, RateSet, SyntheticNoise
from promptopt.scoring import ScoringConfig

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CorpusSection(_Section):
    train: str | None = None
    test: str | None = None
    side_policy: SidePolicy = "category"
    lang_pair: str | None = None


class CompressorSection(_Section):
    kind: Literal["oracle", "endpoint"] = "oracle"
    rate_set: RateSet = Field(default_factory=RateSet.default)
    fixed_rate: float | None = Field(default=None, gt=0.0, le=1.0)
    span_protection: float = Field(default=1.0, ge=0.0, le=1.0)
    compress_fewshots: bool = True

    @field_validator("rate_set", mode="before")
    @classmethod
    def _rates_as_list(cls, v):
        return {"rates": v} if isinstance(v, list) else v


class JudgeSection(_Section):
    backend: BackendName = "synthetic"
    model: str = JUDGE_MODEL
    temperature: float = Field(default=0.0, ge=0.0)
    max_output_tokens: int = Field(default=512, gt=0)
    max_concurrency: int = Field(default=MAX_CONCURRENCY, ge=1)
    cache_dir: str = JUDGE_CACHE_DIR
    use_cache: bool = True
    noise: SyntheticNoise = Field(default_factory=SyntheticNoise)
    mock_reply: str | None = None
    max_attempts: int = Field(default=5, ge=1)
    retry_base_delay: float = Field(default=1.0, ge=0.0)


class CounterSection(_Section):
    mode: CounterMode = "builtin_surface"
    merges_path: str | None = None

    @model_validator(mode="after")
    def _merges_for_vocab(self) -> CounterSection:
        if self.mode == "external_vocab" and not self.merges_path:
            raise ValueError("counter.mode external_vocab needs counter.merges_path")
        return self


class PreferencesSection(_Section):
    span_protection: float = Field(default=0.5, ge=0.0, le=1.0)
    drop_degenerate: bool = False
    prompt_kind: PromptKind = "classic"


class OrpoSection(_Section):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lam: float = Field(default=DEFAULT_LAMBDA, ge=0.0, alias="lambda")
    length_normalized: bool = True
    # JSONL of PairLogprobs; without it build-preferences validates at equal likelihoods.
    logprobs_path: str | None = None


class RunConfig(_Section):
    seed: int = 0
    label: str = "promptopt-lite"
    baseline_label: str = "gemba-mqm"
    prompt_kind: PromptKind = "lite"
    fewshot_count: int = Field(default=3, ge=0, le=3)
    price_per_million: Decimal = Field(default=Decimal("10"), ge=0)
    out_dir: str = "runs"

    corpus: CorpusSection = Field(default_factory=CorpusSection)
    compressor: CompressorSection = Field(default_factory=CompressorSection)
    judge: JudgeSection = Field(default_factory=JudgeSection)
    scoring: ScoringConfig = Field(default_factory=ScoringConfig)
    counter: CounterSection = Field(default_factory=CounterSection)
    preferences: PreferencesSection = Field(default_factory=PreferencesSection)
    orpo: OrpoSection = Field(default_factory=OrpoSection)

    @model_validator(mode="after")
    def _paths_exist(self) -> RunConfig:
        for name, value in (
            ("corpus.train", self.corpus.train),
            ("corpus.test", self.corpus.test),
            ("counter.merges_path", self.counter.merges_path),
            ("orpo.logprobs_path", self.orpo.logprobs_path),
        ):
            if value is not None and not Path(value).exists():
                raise ValueError(f"{name} does not exist: {value}")
        return self

    def build_counter(self) -> TokenCounter:
        if self.counter.mode == "builtin_surface":
            return TokenCounter.builtin()
        try:
            return TokenCounter.from_merges_file(self.counter.merges_path)
        except (OSError, VocabError) as e:
            raise ConfigError(f"cannot load merges table: {e}") from e


def _set_dotted(data: dict, dotted: str, value: Any) -> None:
    *parents, leaf = dotted.split(".")
    node = data
    for part in parents:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {dotted}: {part} is not a section")
    node[leaf] = value


def load_run_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read the JSON run document, apply dotted-key overrides, validate.

    Overrides whose value is None are ignored so unset flags never clobber the file.
    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, dotted, value)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e
    logger.debug(f"[config] resolved: {config.model_dump_json()}")
    return config
