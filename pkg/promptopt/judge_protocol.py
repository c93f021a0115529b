from __future__ import annotations

from typing import Any, Callable, Protocol, runtime_checkable

from promptopt.errors import ConfigError
from promptopt.schemas import BackendName, JudgeRequest, JudgeResponse


@runtime_checkable
class JudgeBackend(Protocol):
    name: BackendName

    async def complete(self, request: JudgeRequest) -> JudgeResponse: ...


class BackendRegistry:
    def __init__(self) -> None:
        self._factories: dict[str, Callable[..., JudgeBackend]] = {}

    def register(self, name: str, factory: Callable[..., JudgeBackend]) -> None:
        self._factories[name] = factory

    def create(self, name: str, **kwargs: Any) -> JudgeBackend:
        factory = self._factories.get(name)
        if factory is None:
            raise ConfigError(f"unknown judge backend {name!r}; known: {self.backend_names}")
        return factory(**kwargs)

    @property
    def backend_names(self) -> list[str]:
        return list(self._factories.keys())


registry = BackendRegistry()
