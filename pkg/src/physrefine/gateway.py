"""Chat-completion gateway: one wire shape, many backends.

The live backend speaks OpenAI-compatible ``POST {base_url}/chat/completions``
JSON. The scripted backend replays canned responses keyed by message
fingerprint or by a human-readable label, which makes every pipeline run
bit-reproducible offline. No other module performs network I/O.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)


class GatewayError(Exception):
    """Base class for gateway failures."""


class TransientBackendError(GatewayError):
    """Retryable failure: timeout, HTTP 429, or a 5xx."""


class BackendExhausted(GatewayError):
    """All retry attempts failed."""


class BadRequest(GatewayError):
    """Non-retryable 4xx or malformed completion payload."""


class ScriptMiss(GatewayError):
    """The scripted backend has no entry for this request."""


class Role(Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self) -> None:
        if self.role in (Role.USER, Role.ASSISTANT) and not self.content:
            raise ValueError(f"{self.role.value} message content must be nonempty")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_ms: int = 100


@dataclass(frozen=True)
class BackendSpec:
    """Declarative backend description, loadable from config files."""

    kind: str  # "http_openai_compatible" | "scripted"
    model_id: str
    base_url: Optional[str] = None
    api_key_env: Optional[str] = None
    script_path: Optional[str] = None
    rate_limit_per_min: int = 0  # 0 disables rate limiting
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self) -> None:
        if self.kind == "http_openai_compatible" and not self.base_url:
            raise ValueError("http backend requires base_url")
        if self.kind == "scripted" and not self.script_path:
            raise ValueError("scripted backend requires script_path")
        if self.kind not in ("http_openai_compatible", "scripted"):
            raise ValueError(f"unknown backend kind {self.kind!r}")


@dataclass(frozen=True)
class ChatExchange:
    """One request/response round trip, as recorded in traces."""

    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float
    max_tokens: int
    response_text: str
    latency_ms: int
    attempt_count: int

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.messages)


def fingerprint(messages: Sequence[ChatMessage]) -> str:
    """Stable content hash of a message list.

    Identical message lists produce identical hex digests across runs and
    platforms; used as the scripted-backend key and as the trace
    cross-reference for exchanges.
    """
    canonical = json.dumps(
        [{"content": m.content, "role": m.role.value} for m in messages],
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Backend(Protocol):
    def generate(
        self,
        messages: Sequence[ChatMessage],
        *,
        temperature: float,
        max_tokens: int,
        label: Optional[str] = None,
    ) -> str: ...


class _RateLimiter:
    """Spaces dispatches at least 60/rate seconds apart; delays, never drops."""

    def __init__(
        self,
        rate_per_min: int,
        clock: Callable[[], float],
        sleep: Callable[[float], None],
    ) -> None:
        self._spacing = 60.0 / rate_per_min if rate_per_min > 0 else 0.0
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_free = 0.0

    def acquire(self) -> float:
        """Block until a slot is free; returns the scheduled dispatch time."""
        if self._spacing <= 0:
            return self._clock()
        with self._lock:
            now = self._clock()
            slot = max(now, self._next_free)
            self._next_free = slot + self._spacing
        wait = slot - self._clock()
        if wait > 0:
            self._sleep(wait)
        return slot


@dataclass
class _ScriptEntry:
    response: str
    label: Optional[str] = None
    fingerprint: Optional[str] = None
    fail_first: int = 0


class ScriptedBackend:
    """Deterministic canned-response backend for offline runs and tests.

    Entries keyed by fingerprint are sticky: the same request always gets the
    same response. Entries sharing a label form a queue consumed in request
    order, so multi-iteration fixtures can script one response per turn.
    ``fail_first`` makes an entry raise a retryable error that many times
    before the response is delivered.
    """

    def __init__(self, entries: Sequence[_ScriptEntry]) -> None:
        self._lock = threading.Lock()
        self._by_fingerprint: dict[str, _ScriptEntry] = {}
        self._by_label: dict[str, list[_ScriptEntry]] = {}
        for entry in entries:
            if not entry.label and not entry.fingerprint:
                raise ValueError("script entry needs a label or a fingerprint")
            if entry.fingerprint:
                self._by_fingerprint[entry.fingerprint] = entry
            else:
                self._by_label.setdefault(entry.label or "", []).append(entry)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, list):
            raise ValueError(f"script file {path} must hold a JSON array")
        entries = [
            _ScriptEntry(
                response=item["response"],
                label=item.get("label"),
                fingerprint=item.get("fingerprint"),
                fail_first=int(item.get("fail_first", 0)),
            )
            for item in raw
        ]
        return cls(entries)

    def generate(
        self,
        messages: Sequence[ChatMessage],
        *,
        temperature: float,
        max_tokens: int,
        label: Optional[str] = None,
    ) -> str:
        fp = fingerprint(messages)
        with self._lock:
            entry = self._by_fingerprint.get(fp)
            consume_from: Optional[list[_ScriptEntry]] = None
            if entry is None and label is not None:
                queue = self._by_label.get(label)
                if queue:
                    entry = queue[0]
                    consume_from = queue
            if entry is None:
                raise ScriptMiss(f"no script entry for label={label!r} fingerprint={fp[:12]}…")
            if entry.fail_first > 0:
                entry.fail_first -= 1
                raise TransientBackendError(
                    f"scripted failure injected for label={label!r} fingerprint={fp[:12]}…"
                )
            if consume_from is not None:
                consume_from.pop(0)
            return entry.response


class HttpBackend:
    """OpenAI-compatible chat-completions client over httpx."""

    def __init__(self, spec: BackendSpec, timeout_s: float = 60.0) -> None:
        assert spec.base_url is not None
        self._spec = spec
        headers = {}
        if spec.api_key_env:
            key = os.environ.get(spec.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            base_url=spec.base_url.rstrip("/"), headers=headers, timeout=timeout_s
        )

    def generate(
        self,
        messages: Sequence[ChatMessage],
        *,
        temperature: float,
        max_tokens: int,
        label: Optional[str] = None,
    ) -> str:
        body = {
            "model": self._spec.model_id,
            "messages": [{"role": m.role.value, "content": m.content} for m in messages],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        try:
            response = self._client.post("/chat/completions", json=body)
        except httpx.HTTPError as exc:
            raise TransientBackendError(f"transport failure: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientBackendError(f"HTTP {response.status_code}")
        if response.status_code >= 400:
            raise BadRequest(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BadRequest(f"malformed completion payload: {exc}") from exc

    def close(self) -> None:
        self._client.close()


def build_backend(spec: BackendSpec) -> Backend:
    if spec.kind == "scripted":
        assert spec.script_path is not None
        return ScriptedBackend.from_file(spec.script_path)
    return HttpBackend(spec)


class ChatGateway:
    """Retrying, rate-limited front door to a single backend.

    Safe to share across any number of threads: the rate limiter and the
    scripted backend synchronize internally, and retry state is per call.
    """

    def __init__(
        self,
        spec: BackendSpec,
        backend: Optional[Backend] = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.spec = spec
        self._backend = backend if backend is not None else build_backend(spec)
        self._clock = clock
        self._sleep = sleep
        self._limiter = _RateLimiter(spec.rate_limit_per_min, clock, sleep)
        self.dispatch_log: list[float] = []
        self._log_lock = threading.Lock()

    def complete(
        self,
        messages: Sequence[ChatMessage],
        *,
        label: Optional[str] = None,
        temperature: float = 0.0,
        max_tokens: int = 2048,
    ) -> ChatExchange:
        if not messages:
            raise ValueError("messages must be nonempty")
        retry = self.spec.retry
        started = self._clock()
        last_error: Optional[Exception] = None
        for attempt in range(1, retry.max_attempts + 1):
            dispatched_at = self._limiter.acquire()
            with self._log_lock:
                self.dispatch_log.append(dispatched_at)
            try:
                text = self._backend.generate(
                    messages, temperature=temperature, max_tokens=max_tokens, label=label
                )
            except TransientBackendError as exc:
                last_error = exc
                logger.debug("attempt %d/%d failed: %s", attempt, retry.max_attempts, exc)
                if attempt < retry.max_attempts:
                    self._sleep(retry.backoff_base_ms * (2 ** (attempt - 1)) / 1000.0)
                continue
            latency_ms = int((self._clock() - started) * 1000)
            return ChatExchange(
                model_id=self.spec.model_id,
                messages=tuple(messages),
                temperature=temperature,
                max_tokens=max_tokens,
                response_text=text,
                latency_ms=latency_ms,
                attempt_count=attempt,
            )
        raise BackendExhausted(
            f"backend {self.spec.model_id!r} failed after {retry.max_attempts} attempts: {last_error}"
        )
