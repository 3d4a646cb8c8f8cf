"""Uniform access to chat-completion and embedding backends.

Every model capability in the pipeline goes through :func:`complete` or
:func:`embed`. Backends are plain objects satisfying :class:`ChatBackend` or
:class:`EmbedBackend`; the scripted and hashing backends here make the rest of
the package testable offline.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import httpx
import numpy as np

logger = logging.getLogger(__name__)


class GatewayError(Exception):
    """Base class for backend failures."""


class TransportError(GatewayError):
    """Network failure or timeout talking to a backend."""


class BackendError(GatewayError):
    """Backend answered with a non-success status."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class BudgetError(GatewayError):
    """Reply was cut at ``max_output_tokens``; the partial reply is kept."""

    def __init__(self, reply: "ChatReply", limit: int):
        super().__init__(f"output truncated at {limit} tokens")
        self.reply = reply
        self.limit = limit

    @property
    def partial_text(self) -> str:
        return self.reply.text


class FixtureMissError(GatewayError):
    """Scripted backend has no fixture for the prompt."""


class EmptyTextError(GatewayError, ValueError):
    """Embedding requested for blank text."""


# ---------------------------------------------------------------------------
# tokenization

_CJK = "぀-ヿ㐀-䶿一-鿿가-힯豈-﫿"
_TOKEN_RE = re.compile(rf"[{_CJK}]|[^\W{_CJK}]+|[^\w\s]")


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> list[str]: ...

    def count(self, text: str) -> int: ...


class RegexTokenizer:
    """Approximate tokenizer: words, single CJK characters and punctuation marks.

    Counts are only meant to be consistent across systems, not to match any
    vendor tokenizer.
    """

    def tokenize(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text)

    def count(self, text: str) -> int:
        return sum(1 for _ in _TOKEN_RE.finditer(text))

    def spans(self, text: str) -> list[tuple[int, int]]:
        return [m.span() for m in _TOKEN_RE.finditer(text)]


DEFAULT_TOKENIZER = RegexTokenizer()


# ---------------------------------------------------------------------------
# chat


@dataclass(frozen=True)
class ChatCall:
    system_text: str
    user_text: str
    temperature: float = 0.0
    seed: int | None = None
    max_output_tokens: int = 1024

    def __post_init__(self):
        if not self.user_text or not self.user_text.strip():
            raise ValueError("user_text must be non-empty")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if self.temperature < 0 or not math.isfinite(self.temperature):
            raise ValueError("temperature must be a finite value >= 0")


@dataclass(frozen=True)
class ChatReply:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    truncated: bool = False

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be >= 0")


class ChatBackend(Protocol):
    def chat(self, call: ChatCall) -> ChatReply: ...


@dataclass
class Usage:
    """Thread-safe running total of token usage."""

    input_tokens: int = 0
    output_tokens: int = 0
    calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, reply: ChatReply) -> None:
        with self._lock:
            self.input_tokens += reply.input_tokens
            self.output_tokens += reply.output_tokens
            self.calls += 1

    def as_dict(self) -> dict:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens, "calls": self.calls}


def _truncate_to_tokens(text: str, limit: int, tokenizer: RegexTokenizer) -> str:
    spans = tokenizer.spans(text)
    if len(spans) <= limit:
        return text
    return text[: spans[limit - 1][1]]


class _LocalBackend:
    """Shared plumbing for in-process backends: token accounting and truncation."""

    def __init__(self, tokenizer: RegexTokenizer | None = None):
        self.tokenizer = tokenizer or DEFAULT_TOKENIZER
        self._lock = threading.Lock()
        self.calls: list[ChatCall] = []

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def _respond(self, call: ChatCall) -> str:
        raise NotImplementedError

    def chat(self, call: ChatCall) -> ChatReply:
        with self._lock:
            self.calls.append(call)
        text = self._respond(call)
        n_in = self.tokenizer.count(call.system_text) + self.tokenizer.count(call.user_text)
        n_out = self.tokenizer.count(text)
        if n_out > call.max_output_tokens:
            text = _truncate_to_tokens(text, call.max_output_tokens, self.tokenizer)
            return ChatReply(text, n_in, call.max_output_tokens, truncated=True)
        return ChatReply(text, n_in, n_out)


class ScriptedBackend(_LocalBackend):
    """Replies from a fixture table keyed on the exact user text.

    ``rules`` (substring, reply) pairs and ``default`` are consulted only when no
    exact key matches; with neither, a miss raises :class:`FixtureMissError`.
    """

    def __init__(
        self,
        fixtures: Mapping[str, str] | None = None,
        rules: Sequence[tuple[str, str]] = (),
        default: str | None = None,
        tokenizer: RegexTokenizer | None = None,
    ):
        super().__init__(tokenizer)
        self.fixtures = dict(fixtures or {})
        self.rules = list(rules)
        self.default = default

    def _respond(self, call: ChatCall) -> str:
        if call.user_text in self.fixtures:
            return self.fixtures[call.user_text]
        for needle, reply in self.rules:
            if needle in call.user_text:
                return reply
        if self.default is not None:
            return self.default
        raise FixtureMissError(f"no fixture for prompt {call.user_text[:60]!r}")


class SequenceBackend(_LocalBackend):
    """Returns queued replies in order; raises FixtureMissError when exhausted."""

    def __init__(self, replies: Sequence[str | Exception], tokenizer: RegexTokenizer | None = None):
        super().__init__(tokenizer)
        self._queue = list(replies)

    def _respond(self, call: ChatCall) -> str:
        with self._lock:
            if not self._queue:
                raise FixtureMissError("scripted reply sequence exhausted")
            item = self._queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


class CallableBackend(_LocalBackend):
    """Delegates to ``responder(call) -> str``; used by the heuristic mocks."""

    def __init__(self, responder: Callable[[ChatCall], str], tokenizer: RegexTokenizer | None = None):
        super().__init__(tokenizer)
        self.responder = responder

    def _respond(self, call: ChatCall) -> str:
        return self.responder(call)


def make_scripted_backend(fixtures: Mapping[str, str]) -> ScriptedBackend:
    return ScriptedBackend(fixtures)


class RemoteChatBackend:
    """Chat-completion style HTTP+JSON backend.

    Sends ``{"model", "messages", "temperature", "seed", "max_tokens"}`` and
    reads ``choices[0].message.content`` plus ``usage``.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str | None = None,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
        tokenizer: RegexTokenizer | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.client = client or httpx.Client(timeout=timeout)
        self.tokenizer = tokenizer or DEFAULT_TOKENIZER

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, call: ChatCall) -> ChatReply:
        messages = []
        if call.system_text:
            messages.append({"role": "system", "content": call.system_text})
        messages.append({"role": "user", "content": call.user_text})
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": call.temperature,
            "max_tokens": call.max_output_tokens,
        }
        if call.seed is not None:
            payload["seed"] = call.seed
        try:
            resp = self.client.post(self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout)
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 400:
            raise BackendError(f"chat backend returned {resp.status_code}", status=resp.status_code)
        try:
            body = resp.json()
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {exc}") from exc
        usage = body.get("usage") or {}
        n_in = usage.get("prompt_tokens")
        n_out = usage.get("completion_tokens")
        if n_in is None:
            n_in = self.tokenizer.count(call.system_text) + self.tokenizer.count(call.user_text)
        if n_out is None:
            n_out = self.tokenizer.count(text)
        return ChatReply(text, int(n_in), int(n_out), truncated=choice.get("finish_reason") == "length")


def complete(backend: ChatBackend, call: ChatCall, *, retry_backoff: float = 0.5, usage: Usage | None = None) -> ChatReply:
    """Run one chat call, retrying once on transport failure.

    Raises :class:`BudgetError` (carrying the partial reply) when the backend
    reports truncation at ``call.max_output_tokens``.
    """
    try:
        reply = backend.chat(call)
    except TransportError as exc:
        logger.warning("transport error, retrying once: %s", exc)
        time.sleep(retry_backoff)
        reply = backend.chat(call)
    if usage is not None:
        usage.add(reply)
    if reply.truncated:
        raise BudgetError(reply, call.max_output_tokens)
    return reply


# ---------------------------------------------------------------------------
# embeddings


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding has non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def cosine(self, other: "EmbeddingVector") -> float:
        return float(np.clip(np.dot(self.values, other.values), -1.0, 1.0))


class EmbedBackend(Protocol):
    dim: int

    def embed_raw(self, text: str) -> np.ndarray: ...


_WORD_RE = re.compile(r"\w+")


def hash_features(text: str, dim: int) -> dict[int, float]:
    """Signed feature-hash counts of the lowercased word tokens of ``text``."""
    tokens = _WORD_RE.findall(text.lower()) or [text.strip().lower()]
    feats: dict[int, float] = {}
    for tok in tokens:
        digest = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        bucket = h % dim
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        feats[bucket] = feats.get(bucket, 0.0) + sign
    return feats


class HashEmbedder:
    """Deterministic bag-of-words embedder built on :func:`hash_features`."""

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def embed_raw(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for bucket, value in hash_features(text, self.dim).items():
            vec[bucket] = value
        if not vec.any():
            # every token cancelled out; fall back to a fixed bucket so the vector is normalizable
            vec[0] = 1.0
        return vec


class RemoteEmbedBackend:
    """Embedding endpoint speaking ``{"model", "input"} -> {"data": [{"embedding"}]}``."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        dim: int,
        api_key_env: str | None = None,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.dim = dim
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.client = client or httpx.Client(timeout=timeout)

    def embed_raw(self, text: str) -> np.ndarray:
        headers = {}
        if self.api_key_env and os.environ.get(self.api_key_env):
            headers["Authorization"] = f"Bearer {os.environ[self.api_key_env]}"
        try:
            resp = self.client.post(self.endpoint, json={"model": self.model, "input": text}, headers=headers)
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code >= 400:
            raise BackendError(f"embedding backend returned {resp.status_code}", status=resp.status_code)
        try:
            values = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed embedding response: {exc}") from exc
        if values.shape != (self.dim,):
            raise BackendError(f"expected dimension {self.dim}, got {values.shape}")
        return values


def embed(backend: EmbedBackend, text: str) -> EmbeddingVector:
    if not text or not text.strip():
        raise EmptyTextError("cannot embed blank text")
    raw = np.asarray(backend.embed_raw(text), dtype=np.float64)
    norm = float(np.linalg.norm(raw))
    if not math.isfinite(norm) or norm == 0.0:
        raise BackendError("embedding has zero or non-finite norm")
    return EmbeddingVector(raw / norm)
