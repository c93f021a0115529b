"""Command-line entry point.

Usage:
    python main.py synth-corpus --segments 200 --out data/
    python main.py build-sft --config run.json --corpus data/corpus.jsonl --out runs/sft
    python main.py build-preferences --config run.json --judge synthetic --out runs/pref
    python main.py evaluate --config run.json --prompt lite --rate 0.5 --emit-table
    python main.py report --out runs/eval
    python main.py cache inspect

Exit codes: 0 success, 1 data or runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
import time
from pathlib import Path

import tools  # noqa: F401  registers judge backends

from config import JUDGE_API_KEY
from evals.report import render_table
from promptopt.cache import JudgeCache
from promptopt.compressor import Compressor, OracleCompressor, build_sft_example
from promptopt.corpus import load_corpus, synthesize_corpus, write_jsonl as write_corpus_jsonl
from promptopt.errors import BackendUnavailable, ConfigError, PromptOptError
from promptopt.graph import EvalDeps, run_evaluation
from promptopt.graph_state import RunSpec
from promptopt.orpo import load_pair_logprobs, validate_dataset
from promptopt.judge import JudgeClient
from promptopt.judge_protocol import registry
from promptopt.preferences import build_preference_dataset
from promptopt.prompt_kit import TokenCounter, load_fewshots
from promptopt.run_config import RunConfig, load_run_config
from promptopt.schemas import Corpus, EvalReport, Quarantined, SegmentRecord
from promptopt.utils import derive_rng, write_json, write_jsonl
from tools.endpoint_compressor import EndpointCompressor

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2


# ── Setup ────────────────────────────────────────────────────────────────


def _setup_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)
    logging.getLogger().setLevel(getattr(logging, level.upper(), logging.INFO))
    # httpx logs every request URL at INFO
    logging.getLogger("httpx").setLevel(logging.WARNING)


def _attach_sidecar(out_dir: Path) -> logging.Handler:
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


def _overrides(args: argparse.Namespace) -> dict:
    corpus_key = "corpus.test" if args.command == "evaluate" else "corpus.train"
    prompt_key = "preferences.prompt_kind" if args.command == "build-preferences" else "prompt_kind"
    return {
        "seed": args.seed,
        "out_dir": args.out,
        prompt_key: args.prompt,
        "judge.backend": args.judge,
        "judge.cache_dir": args.cache_dir,
        "compressor.fixed_rate": args.rate,
        "preferences.drop_degenerate": True if args.drop_degenerate else None,
        "orpo.logprobs_path": args.logprobs,
        corpus_key: args.corpus,
    }


def _load_corpus(path: str | None, config: RunConfig, what: str) -> Corpus:
    if path is None:
        raise ConfigError(f"no {what} corpus configured (set corpus.{what} or pass --corpus)")
    corpus = load_corpus(
        path,
        side_policy=config.corpus.side_policy,
        lang_pair=config.corpus.lang_pair,
        weights=config.scoring.weights,
    )
    for row in corpus.rejected:
        logger.warning(f"[corpus] rejected row {row.row} ({row.kind}): {row.message}")
    return corpus


def counter_mode(config: RunConfig) -> str:
    return "vendor_usage" if config.judge.backend == "http" else config.counter.mode


def build_judge_client(
    config: RunConfig, records: list[SegmentRecord], counter: TokenCounter
) -> JudgeClient:
    judge = config.judge
    if judge.backend == "http":
        if not JUDGE_API_KEY:
            raise ConfigError(
                "judge backend 'http' needs JUDGE_API_KEY in the environment or .env; "
                "use --judge synthetic for an offline run"
            )
        kwargs = {"max_attempts": judge.max_attempts, "retry_base_delay": judge.retry_base_delay}
    elif judge.backend == "mock":
        kwargs = {"script": judge.mock_reply, "counter": counter}
    else:
        kwargs = {"records": records, "noise": judge.noise, "seed": config.seed, "counter": counter}
    backend = registry.create(judge.backend, **kwargs)
    cache = JudgeCache(judge.cache_dir) if judge.use_cache else None
    return JudgeClient(backend, cache, judge.max_concurrency, trace_id=config.label)


def build_compressor(config: RunConfig, span_protection: float | None = None) -> Compressor:
    section = config.compressor
    if span_protection is None:
        span_protection = section.span_protection
    if section.kind == "endpoint":
        return EndpointCompressor(rate_set=section.rate_set, span_protection=span_protection, seed=config.seed)
    return OracleCompressor(rate_set=section.rate_set, span_protection=span_protection, seed=config.seed)


async def _close_compressor(compressor: Compressor) -> None:
    close = getattr(compressor, "aclose", None)
    if close is not None:
        await close()


def _banner(title: str) -> None:
    print(f"{'=' * 60}")
    print(f"  {title}")
    print(f"{'=' * 60}")


# ── Commands ─────────────────────────────────────────────────────────────


async def cmd_build_sft(config: RunConfig) -> int:
    corpus = _load_corpus(config.corpus.train, config, "train")
    out = Path(config.out_dir)
    examples = []
    quarantined: list[Quarantined] = []
    for record in sorted(corpus.records, key=lambda r: r.key):
        try:
            examples.append(build_sft_example(
                record,
                derive_rng(config.seed, record.key),
                config.compressor.rate_set,
                rate=config.compressor.fixed_rate,
                span_protection=config.compressor.span_protection,
                seed=config.seed,
            ))
        except PromptOptError as e:
            logger.warning(f"[{record.key}] quarantined: {type(e).__name__}: {e}")
            quarantined.append(Quarantined(record_key=record.key, kind=type(e).__name__, message=str(e)))
    written = write_jsonl(out / "sft.jsonl", examples)

    _banner("BUILD SFT")
    print(f"  Records in: {len(corpus)} | Rows rejected: {len(corpus.rejected)}")
    print(f"  Examples out: {written} | Quarantined: {len(quarantined)}")
    print(f"  Output: {out / 'sft.jsonl'}")
    return EXIT_DATA if corpus.rejected or quarantined else EXIT_OK


async def cmd_build_preferences(config: RunConfig) -> int:
    corpus = _load_corpus(config.corpus.train, config, "train")
    logprobs = load_pair_logprobs(config.orpo.logprobs_path) if config.orpo.logprobs_path else None
    counter = config.build_counter()
    client = build_judge_client(config, corpus.records, counter)
    compressor = build_compressor(config, span_protection=config.preferences.span_protection)
    out = Path(config.out_dir)
    try:
        records, report = await build_preference_dataset(
            corpus,
            client,
            rate_set=config.compressor.rate_set,
            prompt_kind=config.preferences.prompt_kind,
            weights=config.scoring.weights,
            fallback=config.scoring.fallback,
            seed=config.seed,
            span_protection=config.preferences.span_protection,
            drop_degenerate=config.preferences.drop_degenerate,
            fewshots=load_fewshots(config.fewshot_count),
            model=config.judge.model,
            compressor=compressor,
        )
    finally:
        await client.aclose()
        await _close_compressor(compressor)
    report.orpo = validate_dataset(
        records, logprobs, config.orpo.lam, config.orpo.length_normalized, config.orpo.logprobs_path,
    )
    write_jsonl(out / "preferences.jsonl", records)
    write_json(out / "preferences_report.json", report)

    _banner("BUILD PREFERENCES")
    print(f"  Records in: {report.records_in} | Rows rejected: {len(corpus.rejected)}")
    print(f"  Emitted: {report.emitted} | Skipped: {len(report.skipped)} | Quarantined: {len(report.quarantined)}")
    print(f"  Judge backend calls: {client.backend_calls}")
    source = "uniform baseline" if report.orpo.uniform else config.orpo.logprobs_path
    print(f"  ORPO (lambda={config.orpo.lam}, {source}): {report.orpo.pairs_validated} pairs, "
          f"mean l_orpo={report.orpo.mean_l_orpo}")
    print(f"  Output: {out / 'preferences.jsonl'}")
    return EXIT_DATA if corpus.rejected or report.quarantined else EXIT_OK


def _lps_without_scores(records: list[SegmentRecord], state: dict) -> list[str]:
    valid = {s.lang_pair for s in state["segments"] if s.valid}
    return sorted({r.lang_pair for r in records} - valid)


async def cmd_evaluate(config: RunConfig, emit_table: bool) -> int:
    if config.label == config.baseline_label:
        raise ConfigError("label and baseline_label must differ")
    corpus = _load_corpus(config.corpus.test, config, "test")
    counter = config.build_counter()
    client = build_judge_client(config, corpus.records, counter)
    compressor = build_compressor(config)
    deps = EvalDeps(client=client, compressor=compressor, counter_mode=counter_mode(config))
    out = Path(config.out_dir)

    t0 = time.time()
    try:
        baseline = await run_evaluation(
            config, corpus.records, deps, RunSpec(config.baseline_label, "classic", compress=False),
        )
        variant = await run_evaluation(
            config, corpus.records, deps, RunSpec(config.label, config.prompt_kind, compress=True),
            baseline_tokens=baseline["total_tokens"],
        )
    finally:
        await client.aclose()
        await _close_compressor(compressor)

    reports: list[EvalReport] = [baseline["report"], variant["report"]]
    for report in reports:
        write_json(out / f"report_{report.label}.json", report)
    table = render_table(reports)
    (out / "table.txt").write_text(table, encoding="utf-8")

    quarantined = baseline.get("quarantined", []) + variant.get("quarantined", [])
    missing = sorted(set(_lps_without_scores(corpus.records, baseline))
                     | set(_lps_without_scores(corpus.records, variant)))
    for lp in missing:
        logger.error(f"[evaluate] no valid scores for {lp}")

    _banner("EVALUATE")
    print(f"  Segments: {len(corpus)} | Rows rejected: {len(corpus.rejected)} | Quarantined: {len(quarantined)}")
    print(f"  Judge backend calls: {client.backend_calls} | Wall time: {time.time() - t0:.1f}s")
    print(f"  {config.baseline_label}: {baseline['report'].total_tokens:,} tokens")
    print(f"  {config.label}: {variant['report'].total_tokens:,} tokens "
          f"({variant['report'].reduction_rate:.2f}x reduction)")
    if emit_table:
        print()
        print(table, end="")
    return EXIT_DATA if corpus.rejected or quarantined or missing else EXIT_OK


def cmd_report(config: RunConfig, paths: list[str]) -> int:
    files = [Path(p) for p in paths] or sorted(Path(config.out_dir).glob("report_*.json"))
    if not files:
        logger.error(f"[report] no report_*.json under {config.out_dir}")
        return EXIT_DATA
    reports = [EvalReport.model_validate_json(f.read_text(encoding="utf-8")) for f in files]
    reports.sort(key=lambda r: (-r.total_tokens, r.label))
    print(render_table(reports), end="")
    return EXIT_OK


def cmd_cache(config: RunConfig, action: str) -> int:
    cache = JudgeCache(config.judge.cache_dir)
    if action == "clear":
        removed = cache.clear()
        print(f"Removed {removed} cached responses from {config.judge.cache_dir}")
        return EXIT_OK
    stats = cache.stats()
    print(f"Cache {config.judge.cache_dir}: {stats.entries} entries, {stats.bytes:,} bytes")
    return EXIT_OK


def cmd_synth_corpus(config: RunConfig, segments: int, systems: int) -> int:
    corpus = synthesize_corpus(segments, seed=config.seed, n_systems=systems,
                               weights=config.scoring.weights)
    path = Path(config.out_dir) / "corpus.jsonl"
    written = write_corpus_jsonl(corpus, path)
    print(f"Wrote {written} synthetic segments to {path}")
    return EXIT_OK


# ── Argument parsing ─────────────────────────────────────────────────────


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="JSON run document")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", type=str, default=None, help="Output directory")
    common.add_argument("--corpus", type=str, default=None, help="Corpus path (.tsv or .jsonl)")
    common.add_argument(
        "--prompt", choices=["classic", "lite"], default=None,
        help="Prompt kind (build-preferences: the judge prompt used to score each rate)",
    )
    common.add_argument("--judge", choices=["http", "mock", "synthetic"], default=None)
    common.add_argument("--rate", type=float, default=None, help="Fixed compression rate")
    common.add_argument("--cache-dir", type=str, default=None)
    common.add_argument("--drop-degenerate", action="store_true")
    common.add_argument("--logprobs", type=str, default=None, help="PairLogprobs JSONL for ORPO validation")
    common.add_argument("--emit-table", action="store_true")
    common.add_argument("--log-level", type=str, default="INFO")

    parser = argparse.ArgumentParser(prog="promptopt", description="Span-preserving prompt compression for MQM judging")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build-sft", parents=[common], help="Emit compression SFT examples")
    sub.add_parser("build-preferences", parents=[common], help="Emit chosen/rejected compression pairs")
    sub.add_parser("evaluate", parents=[common], help="Judge baseline and compressed prompts")
    report = sub.add_parser("report", parents=[common], help="Print the table for saved reports")
    report.add_argument("reports", nargs="*", help="report_*.json files (default: all under --out)")
    cache = sub.add_parser("cache", parents=[common], help="Inspect or clear the judge cache")
    cache.add_argument("action", choices=["inspect", "clear"])
    synth = sub.add_parser("synth-corpus", parents=[common], help="Write a synthetic MQM corpus")
    synth.add_argument("--segments", type=int, default=200)
    synth.add_argument("--systems", type=int, default=4)
    return parser


async def _dispatch(args: argparse.Namespace, config: RunConfig) -> int:
    if args.command == "build-sft":
        return await cmd_build_sft(config)
    if args.command == "build-preferences":
        return await cmd_build_preferences(config)
    if args.command == "evaluate":
        return await cmd_evaluate(config, args.emit_table)
    if args.command == "report":
        return cmd_report(config, args.reports)
    if args.command == "cache":
        return cmd_cache(config, args.action)
    return cmd_synth_corpus(config, args.segments, args.systems)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.log_level)

    try:
        config = load_run_config(args.config, _overrides(args))
    except ConfigError as e:
        logger.error(f"[config] {e}")
        return EXIT_CONFIG

    sidecar = None
    if args.command in ("build-sft", "build-preferences", "evaluate"):
        sidecar = _attach_sidecar(Path(config.out_dir))
        write_json(Path(config.out_dir) / "config.resolved.json", config)
    try:
        return asyncio.run(_dispatch(args, config))
    except (ConfigError, BackendUnavailable) as e:
        logger.error(f"[config] {e}")
        return EXIT_CONFIG
    except PromptOptError as e:
        logger.error(f"[run] {type(e).__name__}: {e}")
        return EXIT_DATA
    finally:
        if sidecar is not None:
            logging.getLogger().removeHandler(sidecar)
            sidecar.close()


if __name__ == "__main__":
    sys.exit(main())
