"""Offline benchmark: classic uncompressed baseline vs lite + oracle compression.

Usage:
    python -m benchmarks.benchmark                         # 200 segments, rate 0.5
    python -m benchmarks.benchmark --segments 1000 --runs 3
    python -m benchmarks.benchmark --rate 0.3 --noise 0.1
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import statistics
import sys
import tempfile
import time

logging.basicConfig(level=logging.WARNING, format="%(message)s")
logger = logging.getLogger(__name__)

from promptopt.cli import build_compressor, build_judge_client, counter_mode
from promptopt.corpus import synthesize_corpus
from promptopt.graph import EvalDeps, run_evaluation
from promptopt.graph_state import RunSpec
from promptopt.run_config import load_run_config


async def run_single(segments: int, rate: float, noise: float, seed: int, run_idx: int) -> dict:
    """One cold run (fresh cache directory) of baseline plus variant."""
    corpus = synthesize_corpus(segments, seed=seed)
    with tempfile.TemporaryDirectory() as cache_dir:
        config = load_run_config(overrides={
            "seed": seed,
            "compressor.fixed_rate": rate,
            "judge.cache_dir": cache_dir,
            "judge.noise": {"span_drop_prob": noise, "severity_flip_prob": noise},
        })
        counter = config.build_counter()
        client = build_judge_client(config, corpus.records, counter)
        deps = EvalDeps(client, build_compressor(config), counter_mode(config))

        t0 = time.time()
        baseline = await run_evaluation(
            config, corpus.records, deps, RunSpec(config.baseline_label, "classic", compress=False),
        )
        t_baseline = time.time() - t0
        variant = await run_evaluation(
            config, corpus.records, deps, RunSpec(config.label, config.prompt_kind, compress=True),
            baseline_tokens=baseline["total_tokens"],
        )
        elapsed = time.time() - t0

    report = variant["report"]
    print(f"  run {run_idx + 1}: {elapsed:.2f}s (baseline {t_baseline:.2f}s), "
          f"{report.baseline_tokens:,} -> {report.total_tokens:,} tokens, "
          f"{report.reduction_rate:.2f}x")
    return {
        "elapsed_s": round(elapsed, 3),
        "baseline_tokens": report.baseline_tokens,
        "variant_tokens": report.total_tokens,
        "reduction_rate": report.reduction_rate,
        "baseline_tau": baseline["report"].per_lp_tau,
        "variant_tau": report.per_lp_tau,
    }


async def main() -> None:
    parser = argparse.ArgumentParser(description="Offline compression benchmark")
    parser.add_argument("--segments", type=int, default=200)
    parser.add_argument("--rate", type=float, default=0.5)
    parser.add_argument("--noise", type=float, default=0.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--runs", type=int, default=1)
    parser.add_argument("--json", action="store_true", help="Print results as JSON")
    args = parser.parse_args()

    print(f"{'=' * 60}")
    print(f"  OFFLINE BENCHMARK")
    print(f"  Segments: {args.segments} | Rate: {args.rate} | Noise: {args.noise} | Runs: {args.runs}")
    print(f"{'=' * 60}")

    results = [
        await run_single(args.segments, args.rate, args.noise, args.seed, i) for i in range(args.runs)
    ]
    times = [r["elapsed_s"] for r in results]
    print(f"{'─' * 60}")
    print(f"  Wall time: mean {statistics.mean(times):.2f}s, max {max(times):.2f}s")
    print(f"  Reduction: {results[-1]['reduction_rate']:.2f}x")
    for lp, tau in sorted(results[-1]["variant_tau"].items()):
        base = results[-1]["baseline_tau"].get(lp)
        print(f"  {lp}: tau {tau if tau is None else round(tau, 4)} (baseline {base if base is None else round(base, 4)})")
    if args.json:
        json.dump(results, sys.stdout, indent=2)
        print()


if __name__ == "__main__":
    asyncio.run(main())
