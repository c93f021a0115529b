"""Odds-ratio preference loss: values, gradients and sequence likelihoods.

No model is trained here. The SFT loss enters as a supplied scalar and the
sequence probabilities come from supplied token log-probs, so preference data
and external trainers can be checked against these numbers.
"""

from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator
from scipy.special import expit, log_expit, logit

from promptopt.errors import ConfigError, DomainError
from promptopt.schemas import (
    DEFAULT_LAMBDA,
    OrpoTerms,
    OrpoValidation,
    PairLogprobs,
    PreferenceRecord,
)
from promptopt.utils import read_jsonl

logger = logging.getLogger(__name__)

EPS = 1e-12
UNIFORM_LOGPROB = math.log(0.5)


class SequenceLikelihood(BaseModel):
    token_logprobs: list[float] = Field(..., min_length=1)
    length_normalized: bool = True

    @model_validator(mode="after")
    def _non_positive(self) -> SequenceLikelihood:
        if any(lp > 0.0 for lp in self.token_logprobs):
            raise ValueError("token log-probs must be <= 0")
        return self

    @property
    def log_p(self) -> float:
        total = math.fsum(self.token_logprobs)
        return total / len(self.token_logprobs) if self.length_normalized else total

    @property
    def p(self) -> float:
        return math.exp(self.log_p)


class OrGradient(BaseModel):
    d_pc: float
    d_pr: float


def _check(p: float, name: str, allow_clamp: bool) -> float:
    if not math.isfinite(p):
        raise DomainError(f"{name}={p} is not finite")
    if not 0.0 < p < 1.0 and not allow_clamp:
        raise DomainError(f"{name}={p} outside (0, 1)")
    return min(max(p, EPS), 1.0 - EPS)


def _log_odds_gap(p_c: float, p_r: float) -> float:
    return float(logit(p_c) - logit(p_r))


def or_loss(p_c: float, p_r: float, allow_clamp: bool = False) -> float:
    """-log sigmoid(log odds(p_c) - log odds(p_r)), in the stable log1p(exp(-z)) form."""
    p_c = _check(p_c, "P_c", allow_clamp)
    p_r = _check(p_r, "P_r", allow_clamp)
    return float(-log_expit(_log_odds_gap(p_c, p_r)))


def or_loss_grad(p_c: float, p_r: float, allow_clamp: bool = False) -> OrGradient:
    p_c = _check(p_c, "P_c", allow_clamp)
    p_r = _check(p_r, "P_r", allow_clamp)
    # d/dz of -log sigmoid(z) is -(1 - sigmoid(z)) = -sigmoid(-z)
    g = float(expit(-_log_odds_gap(p_c, p_r)))
    return OrGradient(d_pc=-g / (p_c * (1.0 - p_c)), d_pr=g / (p_r * (1.0 - p_r)))


def odds(p: float) -> float:
    return p / (1.0 - p)


def orpo_total(
    l_sft: float, p_c: float, p_r: float, lam: float = DEFAULT_LAMBDA, allow_clamp: bool = False
) -> OrpoTerms:
    if l_sft < 0.0:
        raise DomainError(f"l_sft={l_sft} must be >= 0")
    if lam < 0.0:
        raise DomainError(f"lambda={lam} must be >= 0")
    p_c = _check(p_c, "P_c", allow_clamp)
    p_r = _check(p_r, "P_r", allow_clamp)
    l_or = or_loss(p_c, p_r)
    return OrpoTerms(
        l_sft=l_sft,
        l_or=l_or,
        l_orpo=l_sft + lam * l_or,
        lam=lam,
        odds_chosen=odds(p_c),
        odds_rejected=odds(p_r),
    )


def sequence_likelihood(logprobs: Sequence[float], length_normalized: bool = True) -> SequenceLikelihood:
    return SequenceLikelihood(token_logprobs=list(logprobs), length_normalized=length_normalized)


def _log_odds_from_log_p(log_p: float) -> float:
    # log(p / (1 - p)) with p = exp(log_p); log1p(-exp(x)) stays finite for tiny p.
    log_p = min(log_p, math.log1p(-EPS))
    return log_p - float(np.log1p(-np.exp(log_p)))


def or_loss_from_logprobs(
    chosen_logprobs: Sequence[float],
    rejected_logprobs: Sequence[float],
    length_normalized: bool = True,
) -> float:
    """Odds-ratio loss from token log-probs without leaving log space."""
    chosen = sequence_likelihood(chosen_logprobs, length_normalized)
    rejected = sequence_likelihood(rejected_logprobs, length_normalized)
    z = _log_odds_from_log_p(chosen.log_p) - _log_odds_from_log_p(rejected.log_p)
    return float(-log_expit(z))


def validate_pair(
    record: PreferenceRecord,
    chosen_logprobs: Sequence[float],
    rejected_logprobs: Sequence[float],
    l_sft: float,
    lam: float = DEFAULT_LAMBDA,
    length_normalized: bool = True,
) -> OrpoTerms:
    """ORPO terms for one preference record given the model's token log-probs."""
    p_c = sequence_likelihood(chosen_logprobs, length_normalized).p
    p_r = sequence_likelihood(rejected_logprobs, length_normalized).p
    terms = orpo_total(l_sft, p_c, p_r, lam, allow_clamp=True)
    logger.debug(
        f"[{record.record_key}] r_c={record.chosen.rate} r_r={record.rejected.rate} "
        f"l_or={terms.l_or:.6f} l_orpo={terms.l_orpo:.6f}"
    )
    return terms


# ── Dataset validation ───────────────────────────────────────────────────


def load_pair_logprobs(path: str) -> dict[str, PairLogprobs]:
    """Read ``PairLogprobs`` lines keyed by record key; a later line wins."""
    try:
        return {pair.record_key: pair for pair in read_jsonl(path, PairLogprobs)}
    except OSError as e:
        raise ConfigError(f"cannot read log-probs file {path}: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"invalid log-probs file {path}: {e}") from e


def validate_dataset(
    records: Sequence[PreferenceRecord],
    logprobs: dict[str, PairLogprobs] | None = None,
    lam: float = DEFAULT_LAMBDA,
    length_normalized: bool = True,
    logprobs_path: str | None = None,
) -> OrpoValidation:
    """ORPO terms for every emitted pair that has supplied log-probs.

    Without ``logprobs`` each pair is scored as an untrained policy would see it:
    both completions at probability 0.5, so ``l_or = ln 2`` and
    ``l_orpo = lam * ln 2``.
    """
    if lam < 0.0:
        raise DomainError(f"lambda={lam} must be >= 0")
    uniform = logprobs is None
    if uniform:
        logprobs = {
            r.record_key: PairLogprobs(
                record_key=r.record_key, chosen_logprobs=[UNIFORM_LOGPROB], rejected_logprobs=[UNIFORM_LOGPROB],
            )
            for r in records
        }
    per_record: dict[str, OrpoTerms] = {}
    missing: list[str] = []
    for record in records:
        pair = logprobs.get(record.record_key)
        if pair is None:
            missing.append(record.record_key)
            continue
        per_record[record.record_key] = validate_pair(
            record, pair.chosen_logprobs, pair.rejected_logprobs, pair.l_sft, lam, length_normalized,
        )

    terms = list(per_record.values())
    validation = OrpoValidation(
        lam=lam,
        length_normalized=length_normalized,
        logprobs_path=logprobs_path,
        uniform=uniform,
        pairs_validated=len(terms),
        missing=missing,
        mean_l_or=math.fsum(t.l_or for t in terms) / len(terms) if terms else None,
        mean_l_orpo=math.fsum(t.l_orpo for t in terms) / len(terms) if terms else None,
        per_record=per_record,
    )
    if missing:
        logger.warning(f"[orpo] {len(missing)} emitted pairs have no log-probs")
    logger.info(
        f"[orpo] lambda={lam} validated {validation.pairs_validated} pairs, "
        f"mean l_orpo={validation.mean_l_orpo}"
    )
    return validation
