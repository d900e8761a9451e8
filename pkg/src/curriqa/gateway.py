"""Uniform client for chat-style LLM providers.

One ``Gateway`` fronts every provider the pipeline talks to. It adds retries
with exponential backoff, per-provider sliding-window rate limiting, an
optional deterministic reply cache keyed by request digest, and a scriptable
mock provider so whole pipeline runs are reproducible offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import string
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol, Sequence, Union

from .errors import (
    AuthFailure,
    BudgetExceeded,
    NoCatchAll,
    ProviderUnavailable,
    UnparseableReply,
)

log = logging.getLogger(__name__)

ROLE_TAGS = ("generator", "evaluator", "reviser", "translator", "judge")
SPEAKERS = ("system", "user", "assistant")
FINISH_REASONS = ("complete", "truncated", "refused")

#: (speaker, text) pair; speaker is one of SPEAKERS.
MessagePair = tuple[str, str]


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.7
    max_tokens: int = 1024
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class AgentRequest:
    provider_id: str
    model_id: str
    role_tag: str
    messages: tuple[MessagePair, ...]
    decoding: Decoding = field(default_factory=Decoding)

    def __post_init__(self) -> None:
        if self.role_tag not in ROLE_TAGS:
            raise ValueError(f"unknown role tag {self.role_tag!r}")
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for speaker, _text in self.messages:
            if speaker not in SPEAKERS:
                raise ValueError(f"unknown speaker {speaker!r}")
        if self.messages[0][0] not in ("system", "user"):
            raise ValueError("first message must be system or user")

    def last_user_text(self) -> str:
        for speaker, text in reversed(self.messages):
            if speaker == "user":
                return text
        return ""

    def extended(self, *extra: MessagePair) -> "AgentRequest":
        return AgentRequest(
            provider_id=self.provider_id,
            model_id=self.model_id,
            role_tag=self.role_tag,
            messages=self.messages + tuple(extra),
            decoding=self.decoding,
        )


def request_digest(request: AgentRequest) -> str:
    """Stable content hash of the canonicalized request.

    Covers (provider_id, model_id, messages, decoding) with map keys sorted,
    so identical requests share a digest across runs and processes.
    """
    canonical = {
        "provider_id": request.provider_id,
        "model_id": request.model_id,
        "messages": [[s, t] for s, t in request.messages],
        "decoding": {
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_tokens,
            "seed": request.decoding.seed,
        },
    }
    blob = json.dumps(canonical, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AgentReply:
    text: str
    finish_reason: str
    provider_meta: dict
    request_digest: str

    def to_record(self) -> dict:
        return {
            "text": self.text,
            "finish_reason": self.finish_reason,
            "provider_meta": self.provider_meta,
            "request_digest": self.request_digest,
        }

    @classmethod
    def from_record(cls, record: dict) -> "AgentReply":
        return cls(
            text=record["text"],
            finish_reason=record["finish_reason"],
            provider_meta=record.get("provider_meta", {}),
            request_digest=record["request_digest"],
        )


# --- reply cache --------------------------------------------------------------


class ReplyCache(Protocol):
    def get(self, digest: str) -> Optional[AgentReply]: ...

    def put(self, digest: str, reply: AgentReply) -> None: ...


class MemoryCache:
    """Process-local cache; thread-safe."""

    def __init__(self) -> None:
        self._data: dict[str, AgentReply] = {}
        self._lock = threading.Lock()

    def get(self, digest: str) -> Optional[AgentReply]:
        with self._lock:
            return self._data.get(digest)

    def put(self, digest: str, reply: AgentReply) -> None:
        with self._lock:
            self._data[digest] = reply


class DirectoryCache:
    """Content-addressed cache directory: one ``<digest>.json`` per reply."""

    def __init__(self, path: Union[str, os.PathLike]) -> None:
        self.path = str(path)
        os.makedirs(self.path, exist_ok=True)
        self._lock = threading.Lock()

    def _file(self, digest: str) -> str:
        return os.path.join(self.path, digest + ".json")

    def get(self, digest: str) -> Optional[AgentReply]:
        try:
            with open(self._file(digest), encoding="utf-8") as f:
                return AgentReply.from_record(json.load(f))
        except FileNotFoundError:
            return None
        except (json.JSONDecodeError, KeyError):
            # Torn write from a crash: treat as a miss and let the caller refill.
            return None

    def put(self, digest: str, reply: AgentReply) -> None:
        final = self._file(digest)
        tmp = final + ".tmp"
        with self._lock:
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(reply.to_record(), f, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, final)


# --- rate limiting -------------------------------------------------------------


class SlidingWindowLimiter:
    """At most ``rate`` acquisitions in any sliding window of ``window_s`` seconds.

    Blocks callers (via ``sleeper``) until a slot frees. ``clock`` and
    ``sleeper`` are injectable so tests can drive virtual time.
    """

    def __init__(
        self,
        rate: int,
        window_s: float,
        clock: Callable[[], float] = time.monotonic,
        sleeper: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate < 1 or window_s <= 0:
            raise ValueError("rate must be >= 1 and window_s > 0")
        self.rate = rate
        self.window_s = window_s
        self._clock = clock
        self._sleeper = sleeper
        self._sent: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Block until a send slot is available; returns the send timestamp."""
        while True:
            with self._lock:
                now = self._clock()
                while self._sent and self._sent[0] <= now - self.window_s:
                    self._sent.popleft()
                if len(self._sent) < self.rate:
                    self._sent.append(now)
                    return now
                wait = self._sent[0] + self.window_s - now
            self._sleeper(max(wait, 1e-9))


# --- transports ----------------------------------------------------------------


class TransientProviderError(Exception):
    """Retryable provider failure (connection error, 5xx, 429)."""


@dataclass
class ProviderConfig:
    provider_id: str
    base_url: str = ""
    model_id: str = ""
    auth_env: str = ""
    rate: Optional[tuple[int, float]] = None  # (requests R, window W seconds)
    max_attempts: int = 5
    max_requests: Optional[int] = None  # request budget; None = unlimited

    @classmethod
    def from_record(cls, record: dict) -> "ProviderConfig":
        rate = None
        if record.get("rate"):
            rate = (int(record["rate"]["R"]), float(record["rate"]["W"]))
        return cls(
            provider_id=record["provider_id"],
            base_url=record.get("base_url", ""),
            model_id=record.get("model_id", ""),
            auth_env=record.get("auth_env", ""),
            rate=rate,
            max_attempts=int(record.get("max_attempts", 5)),
            max_requests=record.get("max_requests"),
        )


class HttpProvider:
    """JSON-over-HTTP chat-completion transport (messages in, choices out)."""

    _FINISH_MAP = {"stop": "complete", "length": "truncated", "content_filter": "refused"}

    def __init__(self, config: ProviderConfig, client=None) -> None:
        import httpx

        self.config = config
        self._client = client or httpx.Client(timeout=60.0)

    def send(self, request: AgentRequest) -> AgentReply:
        import httpx

        headers = {}
        if self.config.auth_env:
            secret = os.environ.get(self.config.auth_env)
            if not secret:
                raise AuthFailure(self.config.provider_id, f"env var {self.config.auth_env} not set")
            headers["Authorization"] = f"Bearer {secret}"
        payload: dict = {
            "model": request.model_id,
            "messages": [{"role": s, "content": t} for s, t in request.messages],
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_tokens,
        }
        if request.decoding.seed is not None:
            payload["seed"] = request.decoding.seed
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        try:
            response = self._client.post(url, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise TransientProviderError(str(exc)) from exc
        if response.status_code in (401, 403):
            raise AuthFailure(self.config.provider_id, f"HTTP {response.status_code}")
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientProviderError(f"HTTP {response.status_code}")
        if response.status_code != 200:
            raise TransientProviderError(f"unexpected HTTP {response.status_code}")
        body = response.json()
        choice = body["choices"][0]
        finish = self._FINISH_MAP.get(choice.get("finish_reason", "stop"), "complete")
        meta = {k: body[k] for k in ("id", "usage", "model") if k in body}
        return AgentReply(
            text=choice["message"]["content"] or "",
            finish_reason=finish,
            provider_meta=meta,
            request_digest=request_digest(request),
        )


# --- mock provider ---------------------------------------------------------------


@dataclass(frozen=True)
class MockRule:
    """First-match rule: (role constraint, text pattern) -> reply template.

    Templates use ``string.Template`` placeholders (``$name``); available
    substitutions are the pattern's named groups plus ``$last_user``,
    ``$model_id``, and ``$role_tag``. ``error`` can be ``"unavailable"``
    (retryable) or ``"auth"``.
    """

    pattern: re.Pattern
    reply: str = ""
    role: Optional[str] = None
    error: Optional[str] = None
    finish_reason: str = "complete"

    @classmethod
    def from_record(cls, record: dict) -> "MockRule":
        return cls(
            pattern=re.compile(record.get("pattern", ""), re.DOTALL),
            reply=record.get("reply", ""),
            role=record.get("role"),
            error=record.get("error"),
            finish_reason=record.get("finish_reason", "complete"),
        )

    def is_catch_all(self) -> bool:
        return self.role is None and self.pattern.search("") is not None

    def matches(self, request: AgentRequest, text: str) -> Optional[re.Match]:
        if self.role is not None and self.role != request.role_tag:
            return None
        return self.pattern.search(text)


class MockProvider:
    """Deterministic scripted provider: same request, same reply.

    Records every incoming request in ``calls`` (and the limiter-supplied send
    time in ``call_times``) so tests can observe provider traffic.
    """

    def __init__(self, rules: Sequence[MockRule]) -> None:
        if not rules or not any(rule.is_catch_all() for rule in rules):
            raise NoCatchAll()
        self.rules = list(rules)
        self.calls: list[AgentRequest] = []
        self.call_times: list[float] = []
        self._lock = threading.Lock()

    def record(self, request: AgentRequest, when: float) -> None:
        with self._lock:
            self.calls.append(request)
            self.call_times.append(when)

    @property
    def call_count(self) -> int:
        with self._lock:
            return len(self.calls)

    def send(self, request: AgentRequest) -> AgentReply:
        text = "\n".join(t for _s, t in request.messages)
        for rule in self.rules:
            match = rule.matches(request, text)
            if match is None:
                continue
            if rule.error == "unavailable":
                raise TransientProviderError("scripted unavailability")
            if rule.error == "auth":
                raise AuthFailure(request.provider_id, "scripted auth failure")
            subs = dict(match.groupdict())
            subs.setdefault("last_user", request.last_user_text())
            subs.setdefault("model_id", request.model_id)
            subs.setdefault("role_tag", request.role_tag)
            reply_text = string.Template(rule.reply).safe_substitute(subs)
            return AgentReply(
                text=reply_text,
                finish_reason=rule.finish_reason,
                provider_meta={"mock": True},
                request_digest=request_digest(request),
            )
        raise NoCatchAll()  # unreachable: constructor guarantees a catch-all


def register_mock(script: Iterable[Union[MockRule, dict]]) -> MockProvider:
    """Build a mock provider from ordered rules (dicts or MockRule objects)."""
    rules = [r if isinstance(r, MockRule) else MockRule.from_record(r) for r in script]
    return MockProvider(rules)


def load_mock_script(path: Union[str, os.PathLike]) -> list[MockRule]:
    """Load mock rules from a JSONL file (one rule object per line)."""
    rules = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rules.append(MockRule.from_record(json.loads(line)))
    return rules


# --- structured-reply schemas ----------------------------------------------------


class _ParseFailure(Exception):
    pass


#: Field spec: name -> {"type": "bool"|"int"|"float"|"str", "required": bool,
#: "min": number, "max": number, "choices": [...]}.
FieldSpec = dict[str, dict]


def _extract_json_object(text: str) -> dict:
    text = (text or "").strip()
    try:
        obj = json.loads(text)
        if isinstance(obj, dict):
            return obj
    except json.JSONDecodeError:
        pass
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        try:
            obj = json.loads(text[start : end + 1])
            if isinstance(obj, dict):
                return obj
        except json.JSONDecodeError:
            pass
    raise _ParseFailure("no JSON object found")


def parse_structured(text: str, schema: FieldSpec) -> dict:
    """Parse a reply against a field spec. Extra fields are ignored.

    Raises ``_ParseFailure`` on missing required fields or out-of-domain values.
    """
    obj = _extract_json_object(text)
    parsed: dict = {}
    for name, spec in schema.items():
        if name not in obj:
            if spec.get("required", True):
                raise _ParseFailure(f"missing required field {name!r}")
            continue
        value = obj[name]
        kind = spec.get("type", "str")
        if kind == "bool":
            if not isinstance(value, bool):
                raise _ParseFailure(f"field {name!r} is not a bool")
        elif kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise _ParseFailure(f"field {name!r} is not an int")
        elif kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise _ParseFailure(f"field {name!r} is not a number")
        elif kind == "str":
            if not isinstance(value, str):
                raise _ParseFailure(f"field {name!r} is not a string")
        if "min" in spec and value < spec["min"]:
            raise _ParseFailure(f"field {name!r} below minimum {spec['min']}")
        if "max" in spec and value > spec["max"]:
            raise _ParseFailure(f"field {name!r} above maximum {spec['max']}")
        if "choices" in spec and value not in spec["choices"]:
            raise _ParseFailure(f"field {name!r} not in {spec['choices']}")
        parsed[name] = value
    return parsed


REPAIR_INSTRUCTION = (
    "Your previous reply could not be parsed. Respond again with ONLY a valid "
    "JSON object containing the required fields ({fields}), no markdown and no "
    "extra text."
)


# --- gateway ------------------------------------------------------------------------


class _Binding:
    def __init__(
        self,
        transport,
        config: ProviderConfig,
        clock: Callable[[], float],
        sleeper: Callable[[float], None],
    ) -> None:
        self.transport = transport
        self.config = config
        self.limiter = (
            SlidingWindowLimiter(config.rate[0], config.rate[1], clock=clock, sleeper=sleeper)
            if config.rate
            else None
        )
        self.requests_sent = 0
        self.lock = threading.Lock()


class Gateway:
    """Shared front door to all providers; safe for concurrent workers."""

    def __init__(
        self,
        cache: Optional[ReplyCache] = None,
        clock: Callable[[], float] = time.monotonic,
        sleeper: Callable[[float], None] = time.sleep,
        backoff_base: float = 1.0,
        backoff_factor: float = 2.0,
        backoff_cap: float = 60.0,
    ) -> None:
        self.cache = cache
        self._clock = clock
        self._sleeper = sleeper
        self._backoff_base = backoff_base
        self._backoff_factor = backoff_factor
        self._backoff_cap = backoff_cap
        self._bindings: dict[str, _Binding] = {}

    # --- registration ---

    def register_http(self, config: ProviderConfig, client=None) -> None:
        self._bindings[config.provider_id] = _Binding(
            HttpProvider(config, client=client), config, self._clock, self._sleeper
        )

    def register_mock(
        self,
        provider_id: str,
        script: Iterable[Union[MockRule, dict]],
        config: Optional[ProviderConfig] = None,
    ) -> MockProvider:
        provider = register_mock(script)
        cfg = config or ProviderConfig(provider_id=provider_id)
        cfg.provider_id = provider_id
        self._bindings[provider_id] = _Binding(provider, cfg, self._clock, self._sleeper)
        return provider

    def register_transport(self, config: ProviderConfig, transport) -> None:
        self._bindings[config.provider_id] = _Binding(transport, config, self._clock, self._sleeper)

    def provider(self, provider_id: str):
        return self._bindings[provider_id].transport

    # --- completion ---

    def complete(self, request: AgentRequest) -> AgentReply:
        """Complete a request, consulting the cache first.

        A cache hit never contacts the provider. Transient failures are
        retried with exponential backoff up to the provider's attempt cap.
        """
        binding = self._bindings.get(request.provider_id)
        if binding is None:
            raise ValueError(f"provider {request.provider_id!r} is not registered")
        digest = request_digest(request)
        if self.cache is not None:
            hit = self.cache.get(digest)
            if hit is not None:
                return hit

        attempts = binding.config.max_attempts
        last_error = ""
        for attempt in range(1, attempts + 1):
            with binding.lock:
                limit = binding.config.max_requests
                if limit is not None and binding.requests_sent >= limit:
                    raise BudgetExceeded(request.provider_id, binding.requests_sent, limit)
                binding.requests_sent += 1
            sent_at = binding.limiter.acquire() if binding.limiter else self._clock()
            if isinstance(binding.transport, MockProvider):
                binding.transport.record(request, sent_at)
            try:
                reply = binding.transport.send(request)
            except TransientProviderError as exc:
                last_error = str(exc)
                if attempt < attempts:
                    delay = min(
                        self._backoff_base * self._backoff_factor ** (attempt - 1),
                        self._backoff_cap,
                    )
                    self._sleeper(delay)
                continue
            if self.cache is not None:
                self.cache.put(digest, reply)
            return reply
        raise ProviderUnavailable(request.provider_id, attempts, last_error)

    def complete_structured(
        self, request: AgentRequest, schema: FieldSpec, max_repairs: int = 3
    ) -> dict:
        """Complete and parse against ``schema``.

        On parse failure the model is re-asked up to ``max_repairs`` times with
        a repair instruction; the final failure surfaces the raw text.
        """
        current = request
        reply = self.complete(current)
        for _ in range(max_repairs):
            try:
                return parse_structured(reply.text, schema)
            except _ParseFailure:
                instruction = REPAIR_INSTRUCTION.format(fields=", ".join(sorted(schema)))
                current = current.extended(("assistant", reply.text), ("user", instruction))
                reply = self.complete(current)
        try:
            return parse_structured(reply.text, schema)
        except _ParseFailure as exc:
            raise UnparseableReply(reply.text, str(exc)) from exc
