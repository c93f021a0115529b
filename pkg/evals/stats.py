"""Segment-level Kendall tau-b and system-level pairwise accuracy."""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from typing import Sequence

import numpy as np

from promptopt.errors import DegenerateInput, TooFewSystems
from promptopt.schemas import ScoredSegment, SystemScore


# ── Kendall tau-b ────────────────────────────────────────────────────────


def _dense_ranks(values: np.ndarray) -> np.ndarray:
    return np.unique(values, return_inverse=True)[1].astype(np.int64)


def _pairs_tied(ranks: np.ndarray) -> int:
    cnt = np.bincount(ranks).astype(np.int64)
    return int((cnt * (cnt - 1) // 2).sum())


def _count_inversions(seq: list[int]) -> int:
    """Strict inversions (i < j, seq[i] > seq[j]) by bottom-up merge sort."""
    n = len(seq)
    src, dst = list(seq), [0] * n
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid, hi = min(lo + width, n), min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[i] <= src[j]:
                    dst[k] = src[i]
                    i += 1
                else:
                    dst[k] = src[j]
                    inversions += mid - i
                    j += 1
                k += 1
            dst[k:hi] = src[i:mid] + src[j:hi]
        src, dst = dst, src
        width *= 2
    return inversions


def _validate(xs: Sequence[float], ys: Sequence[float]) -> int:
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise DegenerateInput("need at least 2 observations")
    return len(xs)


def _tau_from_counts(concordant_minus_discordant: int, n0: int, n1: int, n2: int) -> float:
    if n0 == n1 or n0 == n2:
        raise DegenerateInput("one side is constant; tau-b is undefined")
    return concordant_minus_discordant / math.sqrt((n0 - n1) * (n0 - n2))


def kendall_tau_b(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Tie-corrected Kendall tau in O(n log n): (C - D) / sqrt((n0 - n1)(n0 - n2))."""
    n = _validate(xs, ys)
    x = _dense_ranks(np.asarray(xs, dtype=float))
    y = _dense_ranks(np.asarray(ys, dtype=float))

    n0 = n * (n - 1) // 2
    n1 = _pairs_tied(x)
    n2 = _pairs_tied(y)

    # Sort by x, then y; a remaining inversion in y is a discordant pair.
    order = np.lexsort((y, x))
    x, y = x[order], y[order]
    discordant = _count_inversions(y.tolist())

    boundary = np.r_[True, (x[1:] != x[:-1]) | (y[1:] != y[:-1]), True]
    runs = np.diff(np.nonzero(boundary)[0]).astype(np.int64)
    n_joint = int((runs * (runs - 1) // 2).sum())

    concordant = n0 - n1 - n2 + n_joint - discordant
    return _tau_from_counts(concordant - discordant, n0, n1, n2)


def kendall_tau_b_bruteforce(xs: Sequence[float], ys: Sequence[float]) -> float:
    """O(n^2) enumeration of every pair; the reference for kendall_tau_b."""
    n = _validate(xs, ys)
    concordant = discordant = n1 = n2 = 0
    for i, j in itertools.combinations(range(n), 2):
        dx, dy = xs[i] - xs[j], ys[i] - ys[j]
        if dx == 0:
            n1 += 1
        if dy == 0:
            n2 += 1
        if dx and dy:
            if (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    return _tau_from_counts(concordant - discordant, n * (n - 1) // 2, n1, n2)


# ── System level ─────────────────────────────────────────────────────────


def system_scores(
    segments: Sequence[ScoredSegment], by_lp: bool = False
) -> dict[str, SystemScore] | dict[tuple[str, str], SystemScore]:
    """Mean metric and human score per system, or per (lang_pair, system)."""
    if not segments:
        raise ValueError("no segments to aggregate")
    metric: dict = defaultdict(list)
    human: dict = defaultdict(list)
    for seg in segments:
        key = (seg.lang_pair, seg.system_id) if by_lp else seg.system_id
        metric[key].append(seg.metric_score)
        human[key].append(seg.human_score)
    return {
        key: SystemScore(metric_mean=math.fsum(metric[key]) / len(metric[key]),
                         human_mean=math.fsum(human[key]) / len(human[key]))
        for key in sorted(metric)
    }


def _sign(d: float, epsilon: float) -> int:
    if abs(d) <= epsilon:
        return 0
    return 1 if d > 0 else -1


def _agreements(systems: dict, epsilon: float) -> tuple[int, int]:
    agree = total = 0
    for a, b in itertools.combinations(sorted(systems), 2):
        sa, sb = systems[a], systems[b]
        total += 1
        if _sign(sa.metric_mean - sb.metric_mean, epsilon) == _sign(sa.human_mean - sb.human_mean, epsilon):
            agree += 1
    return agree, total


def pairwise_accuracy(systems: dict[str, SystemScore], epsilon: float = 1e-9) -> float:
    """Share of system pairs whose metric and human orderings agree.

    Differences within ``epsilon`` count as ties; a tie on both sides agrees,
    a tie on one side only does not.
    """
    if len(systems) < 2:
        raise TooFewSystems(f"need at least 2 systems, got {len(systems)}")
    agree, total = _agreements(systems, epsilon)
    return agree / total


def pooled_pairwise_accuracy(segments: Sequence[ScoredSegment], epsilon: float = 1e-9) -> float:
    """System pairs formed within each language pair, pooled across pairs."""
    by_lp: dict[str, dict[str, SystemScore]] = defaultdict(dict)
    for (lp, system), score in system_scores(segments, by_lp=True).items():
        by_lp[lp][system] = score
    agree = total = 0
    for systems in by_lp.values():
        a, t = _agreements(systems, epsilon)
        agree += a
        total += t
    if total == 0:
        raise TooFewSystems("no language pair has 2 or more systems")
    return agree / total
