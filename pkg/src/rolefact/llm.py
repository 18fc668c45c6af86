"""LLM backend abstraction: a remote OpenAI-compatible HTTP client and a
deterministic scripted mock, behind one chat-completion contract.

Completions are cached keyed by hash(prompt, params, purpose, sample_index) so
identical calls never hit the backend twice; the cache can persist to a JSONL
file so batch runs are resumable. Remote credentials come from the environment:
ROLEFACT_API_BASE, ROLEFACT_MODEL, ROLEFACT_API_KEY.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx

logger = logging.getLogger(__name__)

PURPOSES = ("irg", "dec", "fcr", "fcs", "sru", "baseline", "judge")

ENV_API_BASE = "ROLEFACT_API_BASE"
ENV_MODEL = "ROLEFACT_MODEL"
ENV_API_KEY = "ROLEFACT_API_KEY"


class LLMError(RuntimeError):
    """Base class for backend failures."""


class FixtureMiss(LLMError):
    """The scripted mock has no fixture for a prompt; always a test bug."""


class AuthenticationError(LLMError):
    pass


class RemoteBackendError(LLMError):
    pass


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.7
    top_p: float = 0.95
    max_tokens: int = 512
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class ChatRequest:
    user_prompt: str
    system_prompt: str | None = None
    params: GenerationParams = field(default_factory=GenerationParams)
    purpose: str = "irg"

    def __post_init__(self) -> None:
        if not self.user_prompt:
            raise ValueError("user_prompt must be non-empty")
        if self.purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {self.purpose!r}")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    backend_id: str
    latency: float
    cached: bool


def cache_key(request: ChatRequest, sample_index: int) -> str:
    payload = json.dumps(
        [
            request.system_prompt,
            request.user_prompt,
            request.params.temperature,
            request.params.top_p,
            request.params.max_tokens,
            request.params.seed,
            request.purpose,
            sample_index,
        ],
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ResponseCache:
    """Thread-safe completion cache with optional JSONL persistence."""

    def __init__(self, path: str | Path | None = None):
        self._lock = threading.Lock()
        self._entries: dict[str, tuple[str, str]] = {}
        self.path = Path(path) if path is not None else None
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    self._entries[entry["key"]] = (entry["text"], entry["backend_id"])

    def get(self, key: str) -> tuple[str, str] | None:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, text: str, backend_id: str) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = (text, backend_id)
            if self.path is not None:
                record = {"key": key, "text": text, "backend_id": backend_id}
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class LLMBackend:
    """Shared complete/caching logic; subclasses implement _generate."""

    backend_id = "base"

    def __init__(self, cache: ResponseCache | None = None):
        self.cache = cache if cache is not None else ResponseCache()
        self.generate_calls = 0
        self._counter_lock = threading.Lock()

    def complete(self, request: ChatRequest, sample_index: int = 0) -> ChatResponse:
        key = cache_key(request, sample_index)
        hit = self.cache.get(key)
        if hit is not None:
            text, backend_id = hit
            return ChatResponse(text=text, backend_id=backend_id, latency=0.0, cached=True)
        started = time.perf_counter()
        text = self._generate(request, sample_index)
        latency = time.perf_counter() - started
        with self._counter_lock:
            self.generate_calls += 1
        self.cache.put(key, text, self.backend_id)
        return ChatResponse(text=text, backend_id=self.backend_id, latency=latency, cached=False)

    def _generate(self, request: ChatRequest, sample_index: int) -> str:
        raise NotImplementedError


def complete(backend: LLMBackend, request: ChatRequest) -> ChatResponse:
    return backend.complete(request, sample_index=0)


def sample_n(backend: LLMBackend, request: ChatRequest, m: int) -> list[ChatResponse]:
    """m independent completions, cache-distinct via sample_index.

    Samples may run concurrently; results come back in index order, and any
    sample failure aborts the whole batch.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m == 1:
        return [backend.complete(request, sample_index=0)]
    with ThreadPoolExecutor(max_workers=min(m, 8)) as pool:
        futures = [pool.submit(backend.complete, request, i) for i in range(m)]
        return [f.result() for f in futures]


@dataclass
class MockFixture:
    response: str
    match: str | list[str] | None = None
    prompt_sha256: str | None = None
    purpose: str | None = None
    sample_index: int | None = None

    def matches(self, request: ChatRequest, sample_index: int) -> bool:
        if self.purpose is not None and self.purpose != request.purpose:
            return False
        if self.sample_index is not None and self.sample_index != sample_index:
            return False
        if self.prompt_sha256 is not None:
            return self.prompt_sha256 == prompt_hash(request.user_prompt)
        needles = self.match if isinstance(self.match, list) else [self.match]
        return all(needle in request.user_prompt for needle in needles if needle)


class MockBackend(LLMBackend):
    """Scripted backend for tests: fixture table, first match wins.

    A lookup miss raises FixtureMiss (naming the prompt hash) unless a
    default_handler is installed; randomized property tests use a handler
    deriving deterministic text from the prompt.
    """

    backend_id = "mock"

    def __init__(
        self,
        fixtures: list[MockFixture] | None = None,
        cache: ResponseCache | None = None,
        default_handler: Callable[[ChatRequest, int], str] | None = None,
    ):
        super().__init__(cache=cache)
        self.fixtures = list(fixtures or [])
        self.default_handler = default_handler

    @classmethod
    def from_jsonl(cls, path: str | Path, cache: ResponseCache | None = None) -> "MockBackend":
        fixtures = []
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                fixtures.append(
                    MockFixture(
                        response=entry["response"],
                        match=entry.get("match"),
                        prompt_sha256=entry.get("prompt_sha256"),
                        purpose=entry.get("purpose"),
                        sample_index=entry.get("sample_index"),
                    )
                )
        return cls(fixtures, cache=cache)

    def add(
        self,
        response: str,
        match: str | list[str] | None = None,
        purpose: str | None = None,
        sample_index: int | None = None,
    ) -> None:
        self.fixtures.append(
            MockFixture(response=response, match=match, purpose=purpose, sample_index=sample_index)
        )

    def _generate(self, request: ChatRequest, sample_index: int) -> str:
        for fixture in self.fixtures:
            if fixture.matches(request, sample_index):
                return fixture.response
        if self.default_handler is not None:
            return self.default_handler(request, sample_index)
        raise FixtureMiss(
            f"no fixture for {request.purpose} prompt "
            f"sha256={prompt_hash(request.user_prompt)} sample={sample_index}"
        )


RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class RemoteBackend(LLMBackend):
    """OpenAI-compatible chat-completions client with retry and rate limiting.

    Transient failures (timeouts, 429, 5xx) are retried with exponential
    backoff, at most max_attempts tries; a semaphore bounds in-flight requests.
    """

    def __init__(
        self,
        base_url: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        cache: ResponseCache | None = None,
        max_concurrency: int = 4,
        max_attempts: int = 5,
        timeout: float = 60.0,
        backoff_base: float = 0.5,
        transport: httpx.BaseTransport | None = None,
        seed: int | None = None,
    ):
        super().__init__(cache=cache)
        self.base_url = (base_url or os.environ.get(ENV_API_BASE, "")).rstrip("/")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        if not self.base_url or not self.model:
            raise ValueError(
                f"remote backend needs {ENV_API_BASE} and {ENV_MODEL} "
                "(or explicit base_url/model)"
            )
        self.backend_id = f"remote:{self.model}"
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._semaphore = threading.BoundedSemaphore(max_concurrency)
        self._rng = random.Random(seed)
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        self._client = httpx.Client(timeout=timeout, transport=transport, headers=headers)

    def close(self) -> None:
        self._client.close()

    def _generate(self, request: ChatRequest, sample_index: int) -> str:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.user_prompt})
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "max_tokens": request.params.max_tokens,
        }
        if request.params.seed is not None:
            payload["seed"] = request.params.seed

        last_error = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt > 0:
                time.sleep(self.backoff_base * 2 ** (attempt - 1) + self._rng.random() * 0.1)
            try:
                with self._semaphore:
                    response = self._client.post(
                        f"{self.base_url}/chat/completions", json=payload
                    )
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
                continue
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code in (401, 403):
                raise AuthenticationError(
                    f"authentication failed ({response.status_code})"
                )
            if response.status_code in RETRYABLE_STATUS:
                last_error = f"status {response.status_code}"
                continue
            if response.status_code != 200:
                raise RemoteBackendError(
                    f"unexpected status {response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, ValueError) as exc:
                raise RemoteBackendError(f"malformed completion payload: {exc}") from exc
        raise RemoteBackendError(
            f"exhausted {self.max_attempts} attempts; last error: {last_error}"
        )


def backend_from_env(
    cache: ResponseCache | None = None, seed: int | None = None
) -> RemoteBackend:
    return RemoteBackend(cache=cache, seed=seed)
