"""Model routing and clients: an OpenAI-compatible HTTP client plus a
deterministic mock for reproducible runs and tests.

Routes are declared per stage kind (mutation, insights, lineage); a router
samples among same-kind routes by weight and retries transport failures with
backoff. Model outages surface as LLMUnavailableError so callers can decide
fatality (mutation counts a failure; insights degrade to empty).
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

from .util import canonical_digest, text_digest

logger = logging.getLogger(__name__)

STAGE_KINDS = ("mutation", "insights", "lineage")


class TransportError(Exception):
    """Retryable transport-level failure."""


class LLMUnavailableError(Exception):
    """All retries exhausted; the caller decides whether this is fatal."""


@dataclass(frozen=True)
class ModelRoute:
    stage_kind: str
    model_id: str
    endpoint: str = ""
    temperature: float = 0.7
    max_tokens: int = 4096
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.stage_kind not in STAGE_KINDS:
            raise ValueError(f"bad stage_kind {self.stage_kind!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0 or self.weight <= 0:
            raise ValueError("max_tokens and weight must be positive")


class LLMClient:
    def __init__(self, route: ModelRoute) -> None:
        self.route = route

    def complete(self, prompt: str) -> str:
        raise NotImplementedError


class HttpClient(LLMClient):
    """OpenAI-compatible chat-completions client (model, messages, temperature,
    max_tokens; reply in choices[0].message.content)."""

    def __init__(
        self, route: ModelRoute, api_token: Optional[str] = None, timeout: float = 120.0
    ) -> None:
        super().__init__(route)
        self.api_token = api_token
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_token:
            headers["Authorization"] = f"Bearer {self.api_token}"
        payload = {
            "model": self.route.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.route.temperature,
            "max_tokens": self.route.max_tokens,
        }
        try:
            response = requests.post(
                self.route.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code >= 500:
            raise TransportError(f"server error {response.status_code}")
        if response.status_code != 200:
            raise TransportError(f"http {response.status_code}: {response.text[:500]}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed completion response: {exc}") from exc


class MockClient(LLMClient):
    """Fully deterministic client.

    Responses resolve in order: exact prompt-digest script, then a scripted
    sequence (consumed one response per call), then the default response.
    `fail_first` injects transport errors for retry tests.
    """

    def __init__(
        self,
        route: ModelRoute,
        script: Optional[Dict[str, str]] = None,
        sequence: Optional[List[str]] = None,
        default: str = "",
        fail_first: int = 0,
    ) -> None:
        super().__init__(route)
        self.script = dict(script or {})
        self.sequence = list(sequence or [])
        self.default = default
        self.fail_first = fail_first
        self._lock = threading.Lock()
        self._seq_pos = 0
        self._calls: List[Dict[str, str]] = []

    @property
    def calls(self) -> List[Dict[str, str]]:
        with self._lock:
            return list(self._calls)

    def complete(self, prompt: str) -> str:
        with self._lock:
            if self.fail_first > 0:
                self.fail_first -= 1
                raise TransportError("scripted transport failure")
            digest = text_digest(prompt)
            if digest in self.script:
                response = self.script[digest]
            elif self._seq_pos < len(self.sequence):
                response = self.sequence[self._seq_pos]
                self._seq_pos += 1
            else:
                response = self.default
            self._calls.append({"prompt": prompt, "response": response})
            return response


class ModelRouter:
    """Weighted route sampling with bounded retry/backoff, per stage kind."""

    def __init__(
        self,
        clients,
        rng,
        max_retries: int = 2,
        backoff_seconds: float = 0.1,
    ) -> None:
        """`clients` is a list (grouped by each route's stage_kind) or an
        explicit dict kind -> clients (e.g. one shared mock for all kinds)."""
        self._clients: Dict[str, List[LLMClient]] = {}
        if isinstance(clients, dict):
            for kind, group in clients.items():
                self._clients[kind] = list(group)
        else:
            for client in clients:
                self._clients.setdefault(client.route.stage_kind, []).append(client)
        self._rng = rng
        self._lock = threading.Lock()
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.calls = 0

    def clients_for(self, kind: str) -> List[LLMClient]:
        return self._clients.get(kind, [])

    def has_kind(self, kind: str) -> bool:
        return bool(self._clients.get(kind))

    def fingerprint(self, kind: str) -> str:
        """Cache-key material: the routing configuration visible to a stage kind."""
        routes = [
            {
                "model_id": c.route.model_id,
                "endpoint": c.route.endpoint,
                "temperature": c.route.temperature,
                "max_tokens": c.route.max_tokens,
                "weight": c.route.weight,
            }
            for c in self.clients_for(kind)
        ]
        return canonical_digest(routes)

    def _pick(self, kind: str) -> LLMClient:
        clients = self.clients_for(kind)
        if not clients:
            raise LLMUnavailableError(f"no model route configured for kind {kind!r}")
        if len(clients) == 1:
            return clients[0]
        total = sum(c.route.weight for c in clients)
        with self._lock:
            draw = self._rng.random() * total
        acc = 0.0
        for client in clients:
            acc += client.route.weight
            if draw < acc:
                return client
        return clients[-1]

    def call(self, kind: str, prompt: str) -> str:
        client = self._pick(kind)
        last_error: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._lock:
                    self.calls += 1
                return client.complete(prompt)
            except TransportError as exc:
                last_error = exc
                logger.warning(
                    "transport error on %s (%s), attempt %d/%d: %s",
                    client.route.model_id, kind, attempt + 1, self.max_retries + 1, exc,
                )
                if attempt < self.max_retries and self.backoff_seconds > 0:
                    time.sleep(self.backoff_seconds * (attempt + 1))
        raise LLMUnavailableError(f"{kind} route failed after retries: {last_error}")


def resolve_api_token(env_var: str) -> Optional[str]:
    return os.environ.get(env_var) or None
