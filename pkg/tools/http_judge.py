"""OpenAI-compatible chat-completions judge over httpx."""

from __future__ import annotations

import logging

import httpx

from config import HTTP_TIMEOUT, JUDGE_API_KEY, JUDGE_BASE_URL
from promptopt.errors import AuthError, BackendUnavailable, BadRequest
from promptopt.schemas import JudgeRequest, JudgeResponse
from promptopt.utils import retry_with_backoff

logger = logging.getLogger(__name__)


class ChatCompletionsEndpoint:
    """Bearer-authenticated POST {base_url}/chat/completions with retries.

    401/403 raise AuthError and other 4xx raise BadRequest, both without retry;
    429, 5xx and timeouts are retried with full-jitter exponential backoff.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str,
        timeout: float = HTTP_TIMEOUT,
        max_attempts: int = 5,
        retry_base_delay: float = 1.0,
        transport: httpx.AsyncBaseTransport | None = None,
        label: str = "judge",
    ) -> None:
        if not base_url:
            raise BackendUnavailable(f"{label} base URL is not configured")
        if not api_key:
            raise BackendUnavailable(f"{label} API key is not configured")
        self.label = label
        self._client = httpx.AsyncClient(
            base_url=base_url.rstrip("/"),
            timeout=timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {api_key}"},
        )
        self.post = retry_with_backoff(max_attempts=max_attempts, base_delay=retry_base_delay)(
            self._post_once
        )

    async def _post_once(self, body: dict) -> dict:
        resp = await self._client.post("/chat/completions", json=body)
        code = resp.status_code
        if code in (401, 403):
            raise AuthError(f"{self.label} endpoint rejected credentials ({code})")
        if code == 429 or code >= 500:
            resp.raise_for_status()
        if code >= 400:
            raise BadRequest(f"{self.label} endpoint returned {code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as e:
            raise BadRequest(f"{self.label} endpoint returned non-JSON body") from e

    async def aclose(self) -> None:
        await self._client.aclose()


def _message_text(data: dict, label: str) -> str:
    try:
        return data["choices"][0]["message"]["content"] or ""
    except (KeyError, IndexError, TypeError) as e:
        raise BadRequest(f"{label} response has no choices[0].message.content") from e


class HttpJudge:
    name = "http"

    def __init__(
        self,
        base_url: str = JUDGE_BASE_URL,
        api_key: str = JUDGE_API_KEY,
        timeout: float = HTTP_TIMEOUT,
        max_attempts: int = 5,
        retry_base_delay: float = 1.0,
        transport: httpx.AsyncBaseTransport | None = None,
        **_: object,
    ) -> None:
        self._endpoint = ChatCompletionsEndpoint(
            base_url, api_key, timeout=timeout, max_attempts=max_attempts,
            retry_base_delay=retry_base_delay, transport=transport, label="judge",
        )

    async def complete(self, request: JudgeRequest) -> JudgeResponse:
        body = {
            "model": request.model,
            "messages": [m.model_dump() for m in request.prompt.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "response_format": {
                "type": "json_object" if request.response_format == "json" else "text"
            },
        }
        data = await self._endpoint.post(body)
        usage = data.get("usage") or {}
        return JudgeResponse(
            text=_message_text(data, "judge"),
            prompt_tokens=int(usage.get("prompt_tokens") or 0),
            completion_tokens=int(usage.get("completion_tokens") or 0),
            backend="http",
        )

    async def aclose(self) -> None:
        await self._endpoint.aclose()
