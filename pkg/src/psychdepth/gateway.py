"""Chat-completion access: a remote HTTP endpoint or a scripted mock.

Both backends sit behind :class:`Gateway`. The remote backend speaks the
common ``{"model", "messages", "temperature"}`` request shape and reads
``choices[0].message.content`` from the reply; the mock backend is a pure
function of the request messages, the seed and its script file.
"""
from __future__ import annotations

import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import httpx

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class GatewayError(Exception):
    """Base class for backend failures."""


class TransportError(GatewayError):
    """Network failure or server error that survived every retry."""


class AuthError(GatewayError):
    """Missing credential, or the endpoint rejected it (401/403)."""


class MalformedResponse(GatewayError):
    """The endpoint answered but without usable content."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not isinstance(self.content, str) or not self.content.strip():
            raise ValueError("message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.7
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("request needs at least one message")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    endpoint_url: Optional[str] = None
    auth_env_var: Optional[str] = None
    max_retries: int = 3
    backoff_base_ms: float = 500.0
    mock_script: Optional[str] = None
    max_in_flight: int = 4
    embedding_url: Optional[str] = None
    timeout_s: float = 120.0

    def __post_init__(self):
        if self.kind not in ("remote", "mock"):
            raise ValueError(f"backend kind must be 'remote' or 'mock', got {self.kind!r}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if (self.kind == "remote") != bool(self.endpoint_url):
            raise ValueError("endpoint_url is required for remote backends and only for them")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "BackendConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown backend fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Gateway:
    """Shared handle for one backend configuration.

    Safe to use from several worker threads; remote calls are bounded by
    ``config.max_in_flight``.
    """

    config: BackendConfig
    client: Optional[httpx.Client] = None
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=random.Random)
    _behavior: object = field(default=None, init=False, repr=False)
    _slots: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self):
        self._slots = threading.BoundedSemaphore(self.config.max_in_flight)
        if self.config.kind == "mock":
            from .mock import default_behavior, script_mock

            if self.config.mock_script:
                self._behavior = script_mock(self.config.mock_script)
            else:
                self._behavior = default_behavior()

    def complete(self, request: ChatRequest) -> str:
        if self.config.kind == "mock":
            return self._behavior(request.messages, request.seed)
        payload = {
            "model": request.model_id,
            "messages": [m.to_dict() for m in request.messages],
            "temperature": request.temperature,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        data = self._post(self.config.endpoint_url, payload)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise MalformedResponse("response lacks choices[0].message.content") from None
        if not isinstance(content, str):
            raise MalformedResponse("choices[0].message.content is not text")
        return content

    def embed(self, model_id: str, texts: Sequence[str]) -> list[list[float]]:
        """Embedding vectors for ``texts`` (OpenAI-style ``data[i].embedding``)."""
        if self.config.kind == "mock":
            from .mock import hashed_embedding

            return [hashed_embedding(t) for t in texts]
        url = self.config.embedding_url
        if not url:
            raise TransportError("backend has no embedding_url configured")
        data = self._post(url, {"model": model_id, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda d: d.get("index", 0))
            return [list(map(float, r["embedding"])) for r in rows]
        except (KeyError, TypeError, ValueError):
            raise MalformedResponse("embedding response lacks data[i].embedding") from None

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        var = self.config.auth_env_var
        if var:
            token = os.environ.get(var)
            if not token:
                raise AuthError(f"credential variable {var} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, url: str, payload: dict) -> dict:
        headers = self._headers()
        client = self.client or _shared_client(self.config.timeout_s)
        attempts = self.config.max_retries + 1
        last = "no attempt made"
        for attempt in range(attempts):
            if attempt:
                # full jitter: uniform(0, base * 2^(attempt-1))
                cap = self.config.backoff_base_ms / 1000.0 * 2 ** (attempt - 1)
                self.sleep(self.rng.uniform(0.0, cap))
            with self._slots:
                try:
                    resp = client.post(url, json=payload, headers=headers)
                except httpx.HTTPError as exc:
                    last = f"{type(exc).__name__}"
                    log.warning("attempt %d/%d to %s failed: %s", attempt + 1, attempts, url, last)
                    continue
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credential (HTTP {resp.status_code})")
            if resp.status_code in RETRYABLE_STATUS:
                last = f"HTTP {resp.status_code}"
                log.warning("attempt %d/%d to %s failed: %s", attempt + 1, attempts, url, last)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code} from {url}")
            try:
                return resp.json()
            except ValueError:
                raise MalformedResponse("response body is not JSON") from None
        raise TransportError(f"giving up after {attempts} attempts: {last}")


_clients: dict[float, httpx.Client] = {}
_clients_lock = threading.Lock()


def _shared_client(timeout: float) -> httpx.Client:
    with _clients_lock:
        if timeout not in _clients:
            _clients[timeout] = httpx.Client(timeout=timeout)
        return _clients[timeout]


_gateways: dict[BackendConfig, Gateway] = {}
_gateways_lock = threading.Lock()


def gateway_for(config: BackendConfig) -> Gateway:
    with _gateways_lock:
        gw = _gateways.get(config)
        if gw is None:
            gw = _gateways[config] = Gateway(config)
        return gw


def chat_complete(request: ChatRequest, config: BackendConfig) -> str:
    """Generated assistant text for ``request`` on the configured backend."""
    return gateway_for(config).complete(request)


def resolve_script(path: str | os.PathLike, base: Path | None = None) -> str:
    p = Path(path)
    if not p.is_absolute() and base is not None:
        p = base / p
    return str(p)
