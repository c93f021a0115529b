"""Langfuse reporting for evaluation runs.

Each evaluate pass (baseline or variant) is one root span named after its
label. Graph nodes nest under it as spans, judge backend calls as
generations, and the finished EvalReport summary becomes its output.
Everything is a no-op when LANGFUSE_PUBLIC_KEY / LANGFUSE_SECRET_KEY are unset.
"""

from __future__ import annotations

import functools
import logging
import time
from typing import Any, Awaitable, Callable

from config import LANGFUSE_HOST, LANGFUSE_PUBLIC_KEY, LANGFUSE_SECRET_KEY
from promptopt.schemas import EvalReport, JudgeRequest, JudgeResponse

logger = logging.getLogger(__name__)

Node = Callable[[dict], Awaitable[dict]]

_runs: dict[str, Any] = {}


@functools.lru_cache(maxsize=1)
def _client():
    if not (LANGFUSE_PUBLIC_KEY and LANGFUSE_SECRET_KEY):
        return None
    try:
        from langfuse import Langfuse

        client = Langfuse(public_key=LANGFUSE_PUBLIC_KEY, secret_key=LANGFUSE_SECRET_KEY, host=LANGFUSE_HOST)
    except Exception as e:
        logger.warning(f"Langfuse init failed, tracing off: {e}")
        return None
    logger.info(f"Langfuse tracing enabled ({LANGFUSE_HOST})")
    return client


def enabled() -> bool:
    return _client() is not None


def _ms(t0: float) -> float:
    return round((time.time() - t0) * 1000, 1)


# ── Runs ─────────────────────────────────────────────────────────────────


def start_run(run_id: str, metadata: dict[str, Any] | None = None) -> None:
    client = _client()
    if client is None or run_id in _runs:
        return
    try:
        root = client.start_span(name=f"evaluate:{run_id}", metadata=metadata or {})
        root.update_trace(name="evaluation", metadata={"run": run_id, **(metadata or {})})
        _runs[run_id] = root
    except Exception as e:
        logger.warning(f"[{run_id}] Langfuse run start failed: {e}")


def end_run(run_id: str, report: EvalReport | None = None) -> None:
    root = _runs.pop(run_id, None)
    if root is None:
        return
    try:
        if report is not None:
            root.update(output={
                "total_tokens": report.total_tokens,
                "reduction_rate": report.reduction_rate,
                "pairwise_accuracy": report.pairwise_accuracy,
                "per_lp_tau": report.per_lp_tau,
                "invalid_replies": report.invalid_replies,
            })
        else:
            root.update(level="ERROR", status_message="run ended without a report")
        root.end()
        _client().flush()
    except Exception as e:
        logger.warning(f"[{run_id}] Langfuse run end failed: {e}")


# ── Judge generations ────────────────────────────────────────────────────


def log_judge_generation(
    run_id: str,
    request: JudgeRequest,
    response: JudgeResponse,
    latency_ms: float,
) -> None:
    """Record one backend call. Cache hits never reach here."""
    client = _client()
    if client is None:
        return
    parent = _runs.get(run_id, client)
    try:
        generation = parent.start_generation(
            name=f"judge:{response.backend}",
            model=request.model,
            model_parameters={
                "temperature": request.temperature,
                "max_tokens": request.max_output_tokens,
                "response_format": request.response_format,
            },
            usage_details={"input": response.prompt_tokens, "output": response.completion_tokens},
            metadata={"record": request.record_key, "latency_ms": round(latency_ms, 1)},
        )
        generation.end()
    except Exception as e:
        logger.warning(f"[{run_id}] Langfuse generation log failed: {e}")


# ── Graph nodes ──────────────────────────────────────────────────────────


def traced_node(node_fn: Node) -> Node:
    """Wrap a LangGraph node in a child span of its run (latency, quarantine count)."""

    @functools.wraps(node_fn)
    async def wrapper(state: dict) -> dict:
        root = _runs.get(state.get("trace_id", ""))
        if root is None:
            return await node_fn(state)

        t0 = time.time()
        try:
            span = root.start_span(name=node_fn.__name__, input={"records": len(state.get("records", []))})
        except Exception as e:
            logger.warning(f"Langfuse span start failed: {e}")
            return await node_fn(state)

        try:
            result = await node_fn(state)
        except Exception as e:
            span.update(level="ERROR", status_message=str(e), metadata={"latency_ms": _ms(t0)})
            span.end()
            raise
        span.update(metadata={
            "latency_ms": _ms(t0),
            "quarantined": len(result.get("quarantined", [])) if result else 0,
        })
        span.end()
        return result

    return wrapper
