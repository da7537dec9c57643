"""Chat-completion gateway with an HTTP backend and a scripted offline backend."""

from __future__ import annotations

import fnmatch
import json
import logging
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import httpx

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


class LLMError(RuntimeError):
    pass


class TransportError(LLMError):
    """Network failure or 429/5xx status; retried by the gateway."""


class AuthError(LLMError):
    """Credential rejected; never retried."""


class BudgetExceeded(LLMError):
    pass


class TranscriptMismatch(LLMError):
    pass


class StructuredParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_output_tokens: Optional[int] = None
    response_format_hint: str = "free_text"

    def __post_init__(self):
        msgs = tuple(tuple(m) for m in self.messages)
        if not msgs:
            raise ValueError("a chat request needs at least one message")
        for role, content in msgs:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        object.__setattr__(self, "messages", msgs)
        if self.response_format_hint not in ("free_text", "structured_object"):
            raise ValueError(f"bad response_format_hint {self.response_format_hint!r}")

    @classmethod
    def user(cls, model_name: str, prompt: str, **kw) -> "ChatRequest":
        return cls(model_name, (("user", prompt),), **kw)

    @property
    def prompt(self) -> str:
        """All message contents joined; this is what transcript matchers see."""
        return "\n\n".join(content for _, content in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    usage: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.finish_reason not in ("stop", "length", "error"):
            raise ValueError(f"bad finish_reason {self.finish_reason!r}")
        if self.finish_reason == "stop" and self.content is None:
            raise ValueError("content is required when finish_reason is stop")


def _word_count(text: str) -> int:
    return len(text.split())


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


def match_prompt(pattern: str, prompt: str) -> bool:
    """Glob match over the whole prompt if ``pattern`` has wildcards, else substring."""
    if any(ch in pattern for ch in "*?["):
        return fnmatch.fnmatchcase(prompt, pattern)
    return pattern in prompt


class ScriptedBackend:
    """Replays canned responses.

    Strict mode walks the entries in sequence and fails on the first request
    that does not fit. Otherwise the first unused matching entry is consumed.
    """

    def __init__(self, transcript: Sequence, strict: bool = True):
        self.entries = [
            (e["match"], e["response"]) if isinstance(e, dict) else (e[0], e[1]) for e in transcript
        ]
        self.strict = strict
        self.used = [False] * len(self.entries)
        self.cursor = 0
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path, strict: bool = True) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            strict = data.get("strict", strict)
            data = data["entries"]
        return cls(data, strict=strict)

    @property
    def remaining(self) -> int:
        return self.used.count(False)

    def send(self, request: ChatRequest) -> ChatResponse:
        prompt = request.prompt
        with self._lock:
            self.requests.append(request)
            if self.strict:
                if self.cursor >= len(self.entries):
                    raise TranscriptMismatch(f"transcript exhausted at request {len(self.requests)}")
                pattern, response = self.entries[self.cursor]
                if not match_prompt(pattern, prompt):
                    raise TranscriptMismatch(
                        f"request {len(self.requests)} does not match entry {self.cursor} ({pattern!r})"
                    )
                self.used[self.cursor] = True
                self.cursor += 1
            else:
                for k, (pattern, response) in enumerate(self.entries):
                    if not self.used[k] and match_prompt(pattern, prompt):
                        self.used[k] = True
                        break
                else:
                    raise TranscriptMismatch(f"no transcript entry matches request {len(self.requests)}")
        return ChatResponse(response, "stop", (_word_count(prompt), _word_count(response)))


class HTTPBackend:
    """Backend speaking the common ``/chat/completions`` wire protocol."""

    def __init__(self, base_url: str, api_key: Optional[str] = None, timeout: float = 120.0,
                 client: Optional[httpx.Client] = None):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key = api_key
        self.client = client or httpx.Client(timeout=timeout)

    def send(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model_name,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
        }
        if request.max_output_tokens is not None:
            payload["max_tokens"] = request.max_output_tokens
        if request.response_format_hint == "structured_object":
            payload["response_format"] = {"type": "json_object"}
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self.client.post(self.url, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"credential rejected ({resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise LLMError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            choice = body["choices"][0]
            content = choice["message"].get("content") or ""
            finish = choice.get("finish_reason") or "stop"
        except (ValueError, KeyError, IndexError) as exc:
            raise TransportError(f"malformed completion body: {exc}") from exc
        if finish not in ("stop", "length"):
            finish = "error" if finish != "tool_calls" else "stop"
        usage = body.get("usage") or {}
        return ChatResponse(
            content,
            finish,
            (int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
        )


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


@dataclass
class GatewayStats:
    calls: int = 0
    retries: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    by_tag: dict = field(default_factory=dict)

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class Gateway:
    """Retrying, budgeted, rate-limited front for one backend. Thread-safe."""

    def __init__(
        self,
        backend,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        jitter: bool = True,
        token_budget: Optional[int] = None,
        requests_per_minute: Optional[int] = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.backend = backend
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.jitter = jitter
        self.token_budget = token_budget
        self.requests_per_minute = requests_per_minute
        self.sleep = sleep
        self.clock = clock
        self.stats = GatewayStats()
        self._lock = threading.Lock()
        self._dispatch_lock = threading.Lock()
        self._sent: deque[float] = deque()

    def _throttle(self):
        if not self.requests_per_minute:
            return
        with self._dispatch_lock:
            now = self.clock()
            while self._sent and now - self._sent[0] >= 60.0:
                self._sent.popleft()
            if len(self._sent) >= self.requests_per_minute:
                wait = 60.0 - (now - self._sent[0])
                if wait > 0:
                    self.sleep(wait)
                self._sent.popleft()
            self._sent.append(self.clock())

    def complete(self, request: ChatRequest, tag: Optional[str] = None) -> ChatResponse:
        with self._lock:
            if self.token_budget is not None and self.stats.total_tokens >= self.token_budget:
                raise BudgetExceeded(f"token budget {self.token_budget} exhausted")
        attempt = 0
        while True:
            attempt += 1
            self._throttle()
            try:
                response = self.backend.send(request)
                break
            except TransportError as exc:
                if attempt >= self.max_attempts:
                    raise
                delay = self.backoff_base * 2 ** (attempt - 1)
                if self.jitter:
                    delay *= 1 + random.random() * 0.25
                logger.warning("transport error (%s); retry %d in %.2fs", exc, attempt, delay)
                with self._lock:
                    self.stats.retries += 1
                self.sleep(delay)
        with self._lock:
            self.stats.calls += 1
            self.stats.prompt_tokens += response.usage[0]
            self.stats.completion_tokens += response.usage[1]
            if tag:
                self.stats.by_tag[tag] = self.stats.by_tag.get(tag, 0) + 1
            spent = self.stats.total_tokens
        if self.token_budget is not None and spent > self.token_budget:
            raise BudgetExceeded(f"token budget {self.token_budget} crossed ({spent} tokens)")
        return response

    def ask(self, model: str, prompt: str, tag: Optional[str] = None, structured: bool = False,
            temperature: float = 0.0) -> str:
        req = ChatRequest.user(
            model,
            prompt,
            temperature=temperature,
            response_format_hint="structured_object" if structured else "free_text",
        )
        return self.complete(req, tag=tag).content


# ---------------------------------------------------------------------------
# Structured output
# ---------------------------------------------------------------------------


def extract_structured(content: str):
    """Parse the first balanced JSON object or array embedded in ``content``.

    Code fences and surrounding prose are tolerated; nothing else is repaired.
    """
    decoder = json.JSONDecoder()
    first = None
    for pos, ch in enumerate(content):
        if ch not in "{[":
            continue
        if first is None:
            first = pos
        try:
            obj, _ = decoder.raw_decode(content, pos)
        except json.JSONDecodeError:
            continue
        return obj
    offset = len(content[:first].encode("utf-8")) if first is not None else len(content.encode("utf-8"))
    raise StructuredParseError("no balanced structured object found", offset)
