from __future__ import annotations

from typing import Callable, Sequence, Union

from promptopt.prompt_kit import TokenCounter, count_tokens
from promptopt.schemas import JudgeRequest, JudgeResponse

NO_ERROR_CLASSIC = "Critical:\nno-error\nMajor:\nno-error\nMinor:\nno-error"
NO_ERROR_LITE = '{"critical": ["no-error"], "major": [], "minor": []}'

Script = Union[str, Exception, Sequence[Union[str, Exception]], Callable[[JudgeRequest], str]]


class MockJudge:
    """Scripted judge: a fixed reply, a sequence consumed in call order, or a callable.

    Exceptions in the script are raised instead of replying, for fault injection.
    """

    name = "mock"

    def __init__(
        self,
        script: Script | None = None,
        counter: TokenCounter | None = None,
        **_: object,
    ) -> None:
        self.script = script
        self.counter = counter or TokenCounter.builtin()
        self.calls = 0
        self.requests: list[JudgeRequest] = []

    def _next(self, request: JudgeRequest) -> str | Exception:
        script = self.script
        if script is None:
            return NO_ERROR_LITE if request.response_format == "json" else NO_ERROR_CLASSIC
        if callable(script):
            return script(request)
        if isinstance(script, (str, Exception)):
            return script
        return script[(self.calls - 1) % len(script)]

    async def complete(self, request: JudgeRequest) -> JudgeResponse:
        self.calls += 1
        self.requests.append(request)
        reply = self._next(request)
        if isinstance(reply, Exception):
            raise reply
        return JudgeResponse(
            text=reply,
            prompt_tokens=count_tokens(request.prompt, self.counter),
            completion_tokens=self.counter.count_text(reply),
            backend="mock",
        )
