"""Uniform chat-completion interface over OpenAI-compatible HTTP endpoints
and a deterministic scripted mock.

Mock scripts are JSONL. Keyed records answer any request whose user text
hashes (SHA-256) to their key and are reusable; sequence records are
consumed in file order by requests no key matches. A pipeline run twice
against the same script therefore yields byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field

import requests

from .errors import (
    BackendFailureError,
    MissingApiKeyError,
    ScriptExhaustedError,
    ScriptSyntaxError,
)

DEFAULT_API_KEY_ENV = "THREATFORGE_API_KEY"

HTTP = "http"
MOCK = "mock"


@dataclass(frozen=True)
class ChatRequest:
    user_text: str
    system_text: str = ""
    max_tokens: int = 1024
    temperature: float = 0.0
    model_id: str = "gpt-3.5-turbo"

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if not math.isfinite(self.temperature) or self.temperature < 0:
            raise ValueError("temperature must be finite and non-negative")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_backoff: float = 0.5


def request_key(user_text: str) -> str:
    """Hex SHA-256 of the user text; the lookup key for keyed mock records."""
    return hashlib.sha256(user_text.encode("utf-8")).hexdigest()


class MockScript:
    """Session state for one mock backend: keyed replies plus a cursor
    over the unkeyed sequence."""

    def __init__(self, keyed: dict[str, str], sequence: list[str]):
        self.keyed = keyed
        self.sequence = sequence
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def parse(cls, text: str, source: str = "<script>") -> "MockScript":
        keyed: dict[str, str] = {}
        sequence: list[str] = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScriptSyntaxError(f"{source}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or "response" not in record:
                raise ScriptSyntaxError(f"{source}:{lineno}: record needs a 'response' field")
            mode = record.get("mode")
            if mode == "seq":
                sequence.append(str(record["response"]))
            elif mode == "key":
                key = record.get("key")
                if not key:
                    raise ScriptSyntaxError(f"{source}:{lineno}: keyed record needs a 'key'")
                if key in keyed:
                    raise ScriptSyntaxError(f"{source}:{lineno}: duplicate key {key}")
                keyed[key] = str(record["response"])
            else:
                raise ScriptSyntaxError(f"{source}:{lineno}: mode must be 'seq' or 'key'")
        return cls(keyed, sequence)

    @classmethod
    def load(cls, path) -> "MockScript":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read(), source=str(path))

    def respond(self, request: ChatRequest) -> str:
        key = request_key(request.user_text)
        hit = self.keyed.get(key)
        if hit is not None:
            return hit
        with self._lock:
            if self._cursor >= len(self.sequence):
                raise ScriptExhaustedError(
                    f"no keyed entry for {key[:12]}… and the sequence is spent"
                )
            reply = self.sequence[self._cursor]
            self._cursor += 1
        return reply


@dataclass
class BackendSpec:
    """Where completions come from. Secrets are referenced by env-var name
    only and never stored."""

    kind: str
    endpoint: str = ""
    api_key_env: str = DEFAULT_API_KEY_ENV
    script_path: str = ""
    max_in_flight: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    _script: MockScript | None = field(default=None, repr=False, compare=False)
    _gate: threading.Semaphore | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (HTTP, MOCK):
            raise ValueError(f"backend kind must be 'http' or 'mock', got {self.kind!r}")
        if self.kind == HTTP and not self.endpoint:
            raise ValueError("http backend needs an endpoint")
        if self.kind == MOCK and not self.script_path:
            raise ValueError("mock backend needs a script_path")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be positive")

    def script(self) -> MockScript:
        if self._script is None:
            self._script = MockScript.load(self.script_path)
        return self._script

    def gate(self) -> threading.Semaphore:
        if self._gate is None:
            self._gate = threading.Semaphore(self.max_in_flight)
        return self._gate


def register_mock(script_path) -> BackendSpec:
    """Build a mock backend, parsing the script up front so syntax
    problems surface before any call."""
    spec = BackendSpec(kind=MOCK, script_path=str(script_path))
    spec._script = MockScript.load(script_path)
    return spec


def parse_backend_arg(arg: str) -> BackendSpec:
    """Parse the CLI forms ``mock:PATH``, ``http:URL``, or a bare URL."""
    if arg.startswith("mock:"):
        return register_mock(arg[len("mock:"):])
    if arg.startswith(("http://", "https://")):
        return BackendSpec(kind=HTTP, endpoint=arg)
    if arg.startswith("http:"):
        return BackendSpec(kind=HTTP, endpoint=arg[len("http:"):])
    raise ValueError(f"cannot parse backend {arg!r}; use mock:PATH or http:URL")


def _sleep(seconds: float):
    time.sleep(seconds)


def _post_http(request: ChatRequest, backend: BackendSpec) -> str:
    api_key = os.environ.get(backend.api_key_env, "")
    if not api_key:
        raise MissingApiKeyError(backend.api_key_env)
    messages = []
    if request.system_text:
        messages.append({"role": "system", "content": request.system_text})
    messages.append({"role": "user", "content": request.user_text})
    body = {
        "model": request.model_id,
        "messages": messages,
        "max_tokens": request.max_tokens,
        "temperature": request.temperature,
    }
    url = backend.endpoint.rstrip("/") + "/chat/completions"
    attempts = backend.retry.max_attempts
    last_status: int | None = None
    last_error = "request failed"
    for attempt in range(1, attempts + 1):
        try:
            response = requests.post(
                url,
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=60,
            )
        except requests.RequestException as exc:
            last_status, last_error = None, f"transport error: {exc.__class__.__name__}"
        else:
            if response.status_code == 200:
                try:
                    return response.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, ValueError) as exc:
                    raise BackendFailureError(
                        f"malformed completion body: {exc}", 200, attempt
                    ) from exc
            last_status = response.status_code
            last_error = f"HTTP {response.status_code}"
            if response.status_code != 429 and response.status_code < 500:
                break
        if attempt < attempts:
            _sleep(backend.retry.base_backoff * (2 ** (attempt - 1)))
    raise BackendFailureError(last_error, last_status, attempts)


def _dispatch(request: ChatRequest, backend: BackendSpec) -> str:
    if backend.kind == MOCK:
        return backend.script().respond(request)
    return _post_http(request, backend)


def send_chat(request: ChatRequest, backend: BackendSpec) -> str:
    """Send one chat request and return the assistant text.

    HTTP backends retry transport errors, 5xx, and 429 with exponential
    backoff; a missing API key fails before any network I/O. At most
    ``max_in_flight`` requests run concurrently per backend.
    """
    with backend.gate():
        return _dispatch(request, backend)
