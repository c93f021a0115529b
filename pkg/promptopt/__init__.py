"""Span-preserving prompt compression for LLM-judged MQM evaluation."""
