"""Chat-completion backends: an OpenAI-compatible HTTP client and a scripted mock."""

from __future__ import annotations

import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import httpx

from .errors import (
    AuthFailure,
    BackendError,
    MalformedRecord,
    RateLimited,
    ScriptExhausted,
    TransportError,
)

API_KEY_ENV = "ASSERTCTL_API_KEY"
DEFAULT_MAX_TOKENS = 512
DEFAULT_MAX_IN_FLIGHT = 4
BACKOFF_SECONDS = (1.0, 2.0, 4.0)


@dataclass(frozen=True)
class CompletionRequest:
    """One chat-completion call.

    ``instance_id`` and ``call_index`` never go over the wire; they key the
    mock script and keep aggregation independent of completion order.
    """

    system: str
    user: str
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: Optional[int] = None
    instance_id: Optional[str] = None
    call_index: Optional[int] = None

    def __post_init__(self):
        if not self.user:
            raise ValueError("user message must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    latency_ms: int
    backend_id: str


class Backend:
    backend_id = "abstract"

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        raise NotImplementedError


# -- HTTP ---------------------------------------------------------------------


class HttpBackend(Backend):
    """Client for ``POST <base_url>/chat/completions``.

    Transient failures (429, 5xx, timeouts, connection errors) are retried
    with 1s/2s/4s backoff; 401/403 fail immediately.
    """

    def __init__(self, base_url: str, model: str = "gpt-3.5-turbo", api_key: Optional[str] = None,
                 timeout: float = 60.0, transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        if api_key is None:
            api_key = os.environ.get(API_KEY_ENV, "")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.backend_id = f"http:{self.base_url}#{model}"
        self._sleep = sleep
        self._client = httpx.Client(
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def payload(self, request: CompletionRequest) -> dict:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        return body

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        body = self.payload(request)
        url = f"{self.base_url}/chat/completions"
        last: BackendError = TransportError("no attempt made")
        for attempt in range(len(BACKOFF_SECONDS) + 1):
            if attempt:
                self._sleep(BACKOFF_SECONDS[attempt - 1])
            started = time.monotonic()
            try:
                resp = self._client.post(url, json=body)
            except httpx.TimeoutException as exc:
                last = TransportError(f"timeout: {exc}")
                continue
            except httpx.TransportError as exc:
                last = TransportError(str(exc))
                continue
            latency = int((time.monotonic() - started) * 1000)
            status = resp.status_code
            if status in (401, 403):
                raise AuthFailure(f"HTTP {status} from {url}")
            if status == 429:
                last = RateLimited(f"HTTP 429 from {url}")
                continue
            if status >= 500:
                last = TransportError(f"HTTP {status} from {url}")
                continue
            if status >= 400:
                raise TransportError(f"HTTP {status} from {url}: {resp.text[:200]}")
            return CompletionResponse(_first_message(resp), latency, self.backend_id)
        raise last


def _first_message(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion response: {exc!r}") from None
    return content or ""


# -- mock ---------------------------------------------------------------------


@dataclass
class MockScript:
    """Scripted completions keyed by (instance id, call index).

    Requests without a scripted key draw from ``fallback`` in order. Running
    out is an error; the script never recycles.
    """

    responses: dict[tuple[str, int], str] = field(default_factory=dict)
    fallback: list[str] = field(default_factory=list)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MockScript":
        """Read a script file: one JSON object per line with
        ``instance_id``, ``call_index`` and ``text``. A null ``instance_id``
        appends to the fallback list."""
        script = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    rec = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise MalformedRecord(lineno, f"invalid JSON: {exc.msg}") from None
                if not isinstance(rec, dict) or not isinstance(rec.get("text"), str):
                    raise MalformedRecord(lineno, "mock record needs a string 'text'")
                if rec.get("instance_id") is None:
                    script.fallback.append(rec["text"])
                    continue
                index = rec.get("call_index")
                if not isinstance(index, int) or isinstance(index, bool):
                    raise MalformedRecord(lineno, "mock record needs an integer 'call_index'")
                key = (str(rec["instance_id"]), index)
                if key in script.responses:
                    raise MalformedRecord(lineno, f"duplicate mock key {key}")
                script.responses[key] = rec["text"]
        return script


class MockBackend(Backend):
    """Deterministic offline backend driven by a ``MockScript``.

    ``max_delay`` injects a per-request sleep derived from ``delay_seed`` and
    the request key, to shake out completion-order dependence in callers.
    """

    def __init__(self, script: MockScript, backend_id: str = "mock",
                 max_delay: float = 0.0, delay_seed: int = 0):
        self.script = script
        self.backend_id = backend_id
        self.max_delay = max_delay
        self.delay_seed = delay_seed
        self.requests: list[CompletionRequest] = []
        self._fallback_pos = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return len(self.requests)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        key = (request.instance_id, request.call_index)
        with self._lock:
            self.requests.append(request)
            if key in self.script.responses:
                text = self.script.responses[key]
            elif self._fallback_pos < len(self.script.fallback):
                text = self.script.fallback[self._fallback_pos]
                self._fallback_pos += 1
            else:
                raise ScriptExhausted(f"no scripted response for {key}")
        delay_ms = 0
        if self.max_delay > 0:
            rng = random.Random(f"{self.delay_seed}:{key[0]}:{key[1]}")
            delay = rng.uniform(0, self.max_delay)
            time.sleep(delay)
            delay_ms = int(delay * 1000)
        return CompletionResponse(text, delay_ms, self.backend_id)


# -- batching -----------------------------------------------------------------


class BatchError(BackendError):
    """Raised by ``complete_batch`` when any request failed.

    ``results`` keeps every slot: responses for the requests that succeeded
    and the exception for those that did not.
    """

    def __init__(self, results: list):
        self.results = results
        self.first = next(r for r in results if isinstance(r, Exception))
        super().__init__(f"batch request failed: {self.first}")


def complete_batch(backend: Backend, requests: Sequence[CompletionRequest],
                   max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
                   return_exceptions: bool = False) -> list:
    """Run ``requests`` with at most ``max_in_flight`` outstanding.

    Results come back in request order. With ``return_exceptions`` a failed
    request's slot holds its exception; otherwise a ``BatchError`` carrying
    all slots is raised.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")

    def run(req):
        try:
            return backend.complete(req)
        except BackendError as exc:
            return exc

    if max_in_flight == 1 or len(requests) <= 1:
        results = [run(r) for r in requests]
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = list(pool.map(run, requests))
    if not return_exceptions and any(isinstance(r, Exception) for r in results):
        raise BatchError(results)
    return results
