"""Chat-completion backend abstraction with record/replay for offline runs.

Four modes:

* ``live``     -- HTTP POST to ``{base_url}/chat/completions`` with retries.
* ``record``   -- live, plus every response appended to a transcript file
                  keyed by a content digest of the request.
* ``replay``   -- answers only from the transcript; never touches the network.
* ``scripted`` -- canned responses in order, for tests and repair-loop drills.

Replay and scripted providers make the rest of the engine a pure function of
(transcript, seed, inputs).
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_API_KEY_ENV = "GENLARP_LLM_API_KEY"
DEFAULT_TIMEOUT_MS = 30000
DEFAULT_MAX_RETRIES = 2
BACKOFF_BASE_SECONDS = 0.25  # backoff = base * 2**attempt, jitter-free

MODES = ("live", "record", "replay", "scripted")
ROLES = ("system", "user", "assistant")
FINISH_REASONS = ("stop", "length", "error")


class ProviderError(Exception):
    """Base class for completion backend failures."""


class BackendError(ProviderError):
    """Non-2xx (or otherwise unusable) backend reply after retries."""


class ProviderTimeoutError(ProviderError):
    """Request exceeded timeout_ms on every attempt."""


class CacheMissError(ProviderError):
    """Replay mode has no transcript entry for the request digest."""


class InvalidRequestError(ProviderError):
    """Request violates the PromptRequest invariants."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidRequestError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class PromptRequest:
    system_text: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.2
    max_output_tokens: int = 1024
    tag: str = ""  # call-site label, excluded from the cache key

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise InvalidRequestError("messages must be non-empty")
        if not (0.0 <= self.temperature <= 2.0):
            raise InvalidRequestError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens <= 0:
            raise InvalidRequestError("max_output_tokens must be > 0")


@dataclass(frozen=True)
class PromptResponse:
    text: str
    finish_reason: str = "stop"
    latency_ms: int = 0

    def __post_init__(self):
        if self.finish_reason not in FINISH_REASONS:
            raise InvalidRequestError(f"unknown finish_reason {self.finish_reason!r}")
        if self.latency_ms < 0:
            raise InvalidRequestError("latency_ms must be >= 0")
        if not self.text and self.finish_reason != "error":
            raise InvalidRequestError("empty text requires finish_reason=error")


@dataclass
class ProviderConfig:
    base_url: str = ""
    model_name: str = ""
    api_key_ref: str = DEFAULT_API_KEY_ENV  # env var holding the bearer token
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_retries: int = DEFAULT_MAX_RETRIES
    mode: str = "replay"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidRequestError(f"unknown provider mode {self.mode!r}")


def cache_key(request: PromptRequest) -> str:
    """Stable content digest over everything but the tag.

    Equal requests hash equally across processes and platforms; the tag is
    excluded so differently-labelled call sites share transcript entries.
    """
    payload = json.dumps(
        [
            request.system_text,
            [[m.role, m.text] for m in request.messages],
            repr(request.temperature),
            request.max_output_tokens,
        ],
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ScriptedProvider:
    """Returns canned responses in order, ignoring request content.

    Exhaustion raises BackendError; callers with fallbacks (agent decide)
    degrade gracefully, everything else surfaces the failure.
    """

    def __init__(self, responses: list[str]):
        if not responses:
            raise InvalidRequestError("scripted provider needs at least one response")
        self._responses = list(responses)
        self._lock = threading.Lock()
        self.calls = 0

    def complete(self, request: PromptRequest) -> PromptResponse:
        with self._lock:
            index = self.calls
            self.calls += 1
        if index >= len(self._responses):
            raise BackendError(f"script exhausted after {len(self._responses)} responses")
        return PromptResponse(text=self._responses[index], finish_reason="stop", latency_ms=0)


def scripted_provider(responses: list[str]) -> ScriptedProvider:
    return ScriptedProvider(responses)


def _load_transcript(path: Path) -> dict[str, dict]:
    entries: dict[str, dict] = {}
    if not path.exists():
        return entries
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            entries[record["key"]] = record  # append-only file: last write wins
    return entries


class ReplayProvider:
    """Serves recorded responses by request digest; no network, ever."""

    def __init__(self, transcript_path: str | Path):
        self.transcript_path = Path(transcript_path)
        self._entries = _load_transcript(self.transcript_path)
        self.calls = 0

    def complete(self, request: PromptRequest) -> PromptResponse:
        self.calls += 1
        key = cache_key(request)
        record = self._entries.get(key)
        if record is None:
            raise CacheMissError(f"no transcript entry for key {key} (tag {request.tag!r})")
        return PromptResponse(
            text=record["response_text"],
            finish_reason=record["finish_reason"],
            latency_ms=record["latency_ms"],
        )


class LiveProvider:
    """HTTP chat-completions client with bounded retries and fixed backoff."""

    def __init__(self, config: ProviderConfig, sleep=time.sleep):
        self.config = config
        self._sleep = sleep
        self.calls = 0

    def _api_key(self) -> str:
        return os.environ.get(self.config.api_key_ref or DEFAULT_API_KEY_ENV, "")

    def complete(self, request: PromptRequest) -> PromptResponse:
        import requests

        self.calls += 1
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        messages = [{"role": "system", "content": request.system_text}] if request.system_text else []
        messages += [{"role": m.role, "content": m.text} for m in request.messages]
        body = {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        timeout_s = self.config.timeout_ms / 1000.0

        last_error: ProviderError | None = None
        attempts = 1 + max(0, self.config.max_retries)
        for attempt in range(attempts):
            if attempt:
                self._sleep(BACKOFF_BASE_SECONDS * (2 ** (attempt - 1)))
            started = time.monotonic()
            try:
                reply = requests.post(url, json=body, headers=headers, timeout=timeout_s)
            except requests.Timeout:
                last_error = ProviderTimeoutError(
                    f"timed out after {self.config.timeout_ms} ms (attempt {attempt + 1})"
                )
                continue
            except requests.RequestException as exc:
                last_error = BackendError(f"request failed: {exc}")
                continue
            latency_ms = int((time.monotonic() - started) * 1000)
            if reply.status_code // 100 != 2:
                last_error = BackendError(f"backend returned {reply.status_code}: {reply.text[:200]}")
                continue
            try:
                choice = reply.json()["choices"][0]
                text = choice["message"]["content"] or ""
                finish = choice.get("finish_reason", "stop")
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                last_error = BackendError(f"unparseable backend reply: {exc}")
                continue
            finish_reason = "length" if finish == "length" else "stop"
            if not text:
                finish_reason = "error"
            return PromptResponse(text=text, finish_reason=finish_reason, latency_ms=latency_ms)
        raise last_error if last_error is not None else BackendError("no attempts made")


class RecordingProvider:
    """Wraps another provider and appends (digest, response) to a transcript.

    Appends are serialized through one lock so concurrent sessions share a
    single writer.
    """

    def __init__(self, inner, transcript_path: str | Path):
        self.inner = inner
        self.transcript_path = Path(transcript_path)
        self._lock = threading.Lock()

    def complete(self, request: PromptRequest) -> PromptResponse:
        response = self.inner.complete(request)
        record = {
            "key": cache_key(request),
            "request_tag": request.tag,
            "response_text": response.text,
            "finish_reason": response.finish_reason,
            "latency_ms": response.latency_ms,
        }
        with self._lock:
            self.transcript_path.parent.mkdir(parents=True, exist_ok=True)
            with self.transcript_path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
                handle.flush()
        return response


def build_provider(
    config: ProviderConfig,
    transcript_path: str | Path | None = None,
    script: list[str] | None = None,
):
    """Construct the provider for a config; replay/scripted stay offline."""
    if config.mode == "scripted":
        return ScriptedProvider(script or [])
    if config.mode == "replay":
        if transcript_path is None:
            raise InvalidRequestError("replay mode requires a transcript path")
        return ReplayProvider(transcript_path)
    live = LiveProvider(config)
    if config.mode == "record":
        if transcript_path is None:
            raise InvalidRequestError("record mode requires a transcript path")
        return RecordingProvider(live, transcript_path)
    return live


def complete(
    request: PromptRequest,
    config: ProviderConfig,
    transcript_path: str | Path | None = None,
) -> PromptResponse:
    """One-shot completion through a provider built from the config."""
    return build_provider(config, transcript_path=transcript_path).complete(request)
