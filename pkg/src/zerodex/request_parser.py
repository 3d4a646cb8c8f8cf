"""Single-call search decision and keyword extraction."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Literal

from . import templates
from .gateway import ChatBackend, ChatCall, Usage, complete

MAX_AUX_LISTS = 2
BRIDGE_LANGUAGE = "en"
FORMAT_REMINDER = (
    "\n\nYour previous reply could not be parsed. Reply with exactly one JSON object "
    'with the keys "needs_search", "language", "keywords", "aux_keywords", "time_mode" and, '
    'only when time_mode is "inject", "date". No other text.'
)

_BCP47_RE = re.compile(r"^[A-Za-z]{2,8}(-[A-Za-z0-9]{1,8})*$")


class SchemaError(ValueError):
    """Parser reply is not in the declared structured format."""


class ConsistencyError(SchemaError):
    """Reply is well-formed but contradicts itself (e.g. keywords without search)."""


@dataclass(frozen=True)
class InferenceRequest:
    id: str
    text: str
    received_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    language_hint: str | None = None

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("request text must be non-empty")
        if not isinstance(self.received_at, datetime):
            raise ValueError("received_at must be a datetime")
        if self.received_at.tzinfo is None:
            object.__setattr__(self, "received_at", self.received_at.replace(tzinfo=timezone.utc))
        else:
            object.__setattr__(self, "received_at", self.received_at.astimezone(timezone.utc))

    @classmethod
    def from_dict(cls, data: dict) -> "InferenceRequest":
        received = data.get("received_at")
        kwargs = {}
        if received:
            kwargs["received_at"] = parse_timestamp(received)
        return cls(
            id=str(data.get("id") or "anon"),
            text=data.get("text", ""),
            language_hint=data.get("language_hint"),
            **kwargs,
        )

    def to_dict(self) -> dict:
        out = {"id": self.id, "text": self.text, "received_at": self.received_at.isoformat()}
        if self.language_hint:
            out["language_hint"] = self.language_hint
        return out


def parse_timestamp(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class KeywordList:
    language: str
    keywords: tuple[str, ...]
    role: Literal["main", "auxiliary"] = "main"

    def __post_init__(self):
        object.__setattr__(self, "keywords", tuple(self.keywords))
        if not self.keywords:
            raise ValueError("keyword list must not be empty")
        if any(not isinstance(k, str) or not k.strip() for k in self.keywords):
            raise ValueError("keywords must be non-blank strings")
        if self.role not in ("main", "auxiliary"):
            raise ValueError(f"bad role {self.role!r}")

    @property
    def query(self) -> str:
        return " ".join(self.keywords)

    @property
    def source(self) -> str:
        return "main" if self.role == "main" else f"aux:{self.language}"


@dataclass(frozen=True)
class TimeAnnotation:
    mode: Literal["none", "inject", "omit"] = "none"
    date: str | None = None

    def __post_init__(self):
        if self.mode not in ("none", "inject", "omit"):
            raise ValueError(f"bad time mode {self.mode!r}")
        if (self.mode == "inject") != (self.date is not None):
            raise ValueError("a date is required exactly when mode is 'inject'")


@dataclass(frozen=True)
class ParseOutcome:
    needs_search: bool
    keyword_lists: tuple[KeywordList, ...] = ()
    time_annotation: TimeAnnotation = TimeAnnotation()

    def __post_init__(self):
        object.__setattr__(self, "keyword_lists", tuple(self.keyword_lists))
        mains = [kl for kl in self.keyword_lists if kl.role == "main"]
        if not self.needs_search and self.keyword_lists:
            raise ConsistencyError("needs_search is false but keywords are present")
        if self.needs_search and len(mains) != 1:
            raise ConsistencyError("needs_search is true but there is not exactly one main keyword list")

    @property
    def main(self) -> KeywordList | None:
        return next((kl for kl in self.keyword_lists if kl.role == "main"), None)

    @property
    def auxiliary(self) -> list[KeywordList]:
        return [kl for kl in self.keyword_lists if kl.role == "auxiliary"]

    @classmethod
    def no_search(cls) -> "ParseOutcome":
        return cls(False)

    def to_dict(self) -> dict:
        main = self.main
        out = {
            "needs_search": self.needs_search,
            "language": main.language if main else "und",
            "keywords": list(main.keywords) if main else [],
            "aux_keywords": {kl.language: list(kl.keywords) for kl in self.auxiliary},
            "time_mode": self.time_annotation.mode,
        }
        if self.time_annotation.date is not None:
            out["date"] = self.time_annotation.date
        return out


def serialize_outcome(outcome: ParseOutcome) -> str:
    """Render an outcome in the reply wire format (inverse of parse_parser_reply)."""
    return json.dumps(outcome.to_dict(), ensure_ascii=False)


def build_parser_prompt(request: InferenceRequest, now: datetime) -> ChatCall:
    if now.tzinfo is None:
        now = now.replace(tzinfo=timezone.utc)
    now = now.astimezone(timezone.utc)
    values = dict(
        now_date=now.date().isoformat(),
        now_iso=now.isoformat(timespec="seconds"),
        max_aux=MAX_AUX_LISTS,
        bridge_language=BRIDGE_LANGUAGE,
        request=request.text,
    )
    return ChatCall(
        system_text=templates.render(templates.PARSER_VERSION, "system"),
        user_text=templates.render(templates.PARSER_VERSION, "user", **values),
        temperature=0.0,
        max_output_tokens=256,
    )


_FENCE_RE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.S)


def _keyword_list(raw, field_name: str) -> list[str]:
    if not isinstance(raw, list) or not all(isinstance(k, str) for k in raw):
        raise SchemaError(f"{field_name} must be a list of strings")
    if any(not k.strip() for k in raw):
        raise SchemaError(f"{field_name} contains a blank keyword")
    return list(raw)


def _language(raw, field_name: str) -> str:
    if not isinstance(raw, str) or not _BCP47_RE.match(raw):
        raise SchemaError(f"{field_name} is not a BCP-47 tag: {raw!r}")
    return raw


def parse_parser_reply(reply_text: str) -> ParseOutcome:
    text = reply_text.strip()
    fenced = _FENCE_RE.match(text)
    if fenced:
        text = fenced.group(1)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"reply is not JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("reply must be a JSON object")
    unknown = set(data) - {"needs_search", "language", "keywords", "aux_keywords", "time_mode", "date"}
    if unknown:
        raise SchemaError(f"unknown fields: {sorted(unknown)}")
    needs = data.get("needs_search")
    if not isinstance(needs, bool):
        raise SchemaError("needs_search must be a boolean")
    keywords = _keyword_list(data.get("keywords", []), "keywords")
    aux_raw = data.get("aux_keywords", {})
    if not isinstance(aux_raw, dict):
        raise SchemaError("aux_keywords must be an object")
    if len(aux_raw) > MAX_AUX_LISTS:
        raise SchemaError(f"at most {MAX_AUX_LISTS} auxiliary lists are allowed")
    aux = {_language(lang, "aux_keywords key"): _keyword_list(kws, f"aux_keywords[{lang}]") for lang, kws in aux_raw.items()}
    mode = data.get("time_mode", "none")
    if mode not in ("none", "inject", "omit"):
        raise SchemaError(f"time_mode must be none, inject or omit, got {mode!r}")
    date_value = data.get("date")
    if mode == "inject":
        if not isinstance(date_value, str):
            raise SchemaError("time_mode inject requires a date")
        try:
            date.fromisoformat(date_value)
        except ValueError as exc:
            raise SchemaError(f"bad date {date_value!r}") from exc
    elif date_value is not None:
        raise ConsistencyError("date given but time_mode is not inject")

    if not needs:
        if keywords or any(aux.values()):
            raise ConsistencyError("needs_search is false but keywords are present")
        if mode != "none":
            raise ConsistencyError("needs_search is false but a time mode is set")
        return ParseOutcome(False)
    if not keywords:
        raise ConsistencyError("needs_search is true but no keywords were given")
    language = _language(data.get("language", "und"), "language")
    lists = [KeywordList(language, tuple(keywords), "main")]
    for lang, kws in aux.items():
        if not kws:
            raise SchemaError(f"auxiliary list {lang} is empty")
        lists.append(KeywordList(lang, tuple(kws), "auxiliary"))
    return ParseOutcome(True, tuple(lists), TimeAnnotation(mode, date_value if mode == "inject" else None))


def decide_and_extract(
    backend: ChatBackend,
    request: InferenceRequest,
    now: datetime | None = None,
    *,
    trace: list | None = None,
    usage: Usage | None = None,
    retry_backoff: float = 0.5,
) -> ParseOutcome:
    """One parser call; a schema failure gets exactly one re-ask before raising."""
    call = build_parser_prompt(request, now or request.received_at)
    reply = complete(backend, call, usage=usage, retry_backoff=retry_backoff)
    try:
        return parse_parser_reply(reply.text)
    except SchemaError as exc:
        if trace is not None:
            trace.append({"event": "parser_retry", "error": str(exc)})
    retry = ChatCall(
        system_text=call.system_text,
        user_text=call.user_text + FORMAT_REMINDER,
        temperature=call.temperature,
        seed=call.seed,
        max_output_tokens=call.max_output_tokens,
    )
    reply = complete(backend, retry, usage=usage, retry_backoff=retry_backoff)
    return parse_parser_reply(reply.text)
