"""Chat-completions wire client for the remote transition agent."""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass

import httpx

from scivla.errors import ConfigError, TransportError

log = logging.getLogger(__name__)

API_KEY_ENV = "SCIVLA_API_KEY"


@dataclass(frozen=True)
class RemoteSettings:
    base_url: str = "https://api.openai.com"
    path: str = "/v1/chat/completions"
    model: str = "gpt-4o"
    temperature: float = 0.0
    timeout: float = 30.0
    max_in_flight: int = 4


class ChatClient:
    """Blocking client; at most ``max_in_flight`` requests run at once across threads."""

    def __init__(
        self,
        settings: RemoteSettings,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not key:
            raise ConfigError(f"remote backend needs an API key in ${API_KEY_ENV}", "agent.remote")
        if settings.max_in_flight < 1:
            raise ConfigError("must be at least 1", "agent.remote.max_in_flight")
        self.settings = settings
        self._key = key
        self._gate = threading.BoundedSemaphore(settings.max_in_flight)
        self._http = httpx.Client(
            base_url=settings.base_url.rstrip("/"),
            timeout=settings.timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def complete(self, messages: list[dict]) -> str:
        payload = {
            "model": self.settings.model,
            "messages": messages,
            "temperature": self.settings.temperature,
        }
        headers = {"Authorization": f"Bearer {self._key}", "Content-Type": "application/json"}
        with self._gate:
            try:
                resp = self._http.post(self.settings.path, json=payload, headers=headers)
                resp.raise_for_status()
                data = resp.json()
            except httpx.HTTPError as exc:
                raise TransportError(f"request to {self.settings.path} failed: {exc}") from exc
            except ValueError as exc:
                raise TransportError(f"reply is not JSON: {exc}") from exc
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise TransportError("reply has no choices[0].message.content") from None
        if not isinstance(content, str):
            raise TransportError("message content is not text")
        log.debug("chat reply: %d chars", len(content))
        return content
