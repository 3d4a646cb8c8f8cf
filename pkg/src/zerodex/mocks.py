"""Deterministic stand-ins for the parser, extractor, generator and judge models.

They read the structured prompts the package renders, so they only work with
the shipped templates. Useful for offline demos, tests and harness checks.
"""

from __future__ import annotations

import json
import random
import re
from datetime import date

from .gateway import CallableBackend, ChatCall

STOPWORDS = frozenset(
    """a an and are as at be best by can could did do does for from has have how i in is it its
    me my of on or please should tell than that the their there these this to was what when where
    which who why will with would you your about into more most some than any""".split()
)

_REQUEST_RE = re.compile(r"Request:\n<<<\n(.*?)\n>>>", re.S)
_SEG_RE = re.compile(r"<TAG-(\d+)>(.*?)</TAG-\1>", re.S)
_NOW_RE = re.compile(r"Current date: (\d{4}-\d{2}-\d{2})")
_YEAR_RE = re.compile(r"\b(19|20)\d{2}\b")
_TIMELY = ("weather", "today", "tonight", "latest", "now", "news", "price", "score", "stock", "forecast")


def content_words(text: str) -> list[str]:
    words = re.findall(r"\w+", text.lower())
    return [w for w in words if w not in STOPWORDS and len(w) > 2]


def read_extractor_prompt(user_text: str) -> tuple[str, list[tuple[int, str]]]:
    m = _REQUEST_RE.search(user_text)
    request = m.group(1) if m else ""
    segments = [(int(t), s) for t, s in _SEG_RE.findall(user_text)]
    return request, segments


def format_tags(tags) -> str:
    tags = sorted(set(tags))
    return ",".join(f"TAG-{t}" for t in tags) if tags else "None"


# ---------------------------------------------------------------------------
# parser


def heuristic_parser_reply(call: ChatCall) -> str:
    m = _REQUEST_RE.search(call.user_text)
    request = m.group(1) if m else call.user_text
    now = _NOW_RE.search(call.user_text)
    words = []
    for w in re.findall(r"[\w'-]+", request):
        if w.lower() not in STOPWORDS and len(w) > 1 and w not in words:
            words.append(w)
    if len(words) < 2:
        return json.dumps({"needs_search": False, "keywords": [], "aux_keywords": {}, "time_mode": "none"})
    keywords = words[:6]
    lower = request.lower()
    out = {"needs_search": True, "language": "en", "keywords": keywords, "aux_keywords": {}, "time_mode": "none"}
    if _YEAR_RE.search(request):
        out["time_mode"] = "omit"
    elif any(t in lower for t in _TIMELY) and now:
        out["time_mode"] = "inject"
        out["date"] = now.group(1)
        out["keywords"] = keywords + [now.group(1)]
    return json.dumps(out)


def heuristic_parser() -> CallableBackend:
    return CallableBackend(heuristic_parser_reply)


# ---------------------------------------------------------------------------
# extractors


def proper_names(text: str) -> set[str]:
    """Capitalized non-initial words, lowercased; a crude named-entity detector."""
    words = re.findall(r"[\w'-]+", text)
    return {w.lower() for w in words[1:] if w[0].isupper() and w.lower() not in STOPWORDS}


def overlap_extractor_reply(call: ChatCall, min_overlap: int = 1) -> str:
    """Select segments relevant to the request by word overlap.

    When the request names something (a capitalized word), only segments
    mentioning one of those names qualify; otherwise a segment needs
    ``min_overlap`` shared content words.
    """
    request, segments = read_extractor_prompt(call.user_text)
    names = proper_names(request)
    if names:
        tags = [t for t, text in segments if names & set(re.findall(r"\w+", text.lower()))]
    else:
        wanted = set(content_words(request))
        tags = [t for t, text in segments if len(wanted & set(content_words(text))) >= min_overlap]
    return format_tags(tags)


def overlap_extractor(min_overlap: int = 1) -> CallableBackend:
    return CallableBackend(lambda call: overlap_extractor_reply(call, min_overlap))


def fraction_extractor(fraction: float = 0.5) -> CallableBackend:
    """Always selects a fixed fraction of the tags, evenly spaced."""

    def reply(call: ChatCall) -> str:
        _, segments = read_extractor_prompt(call.user_text)
        ids = [t for t, _ in segments]
        if not ids:
            return "None"
        step = 1.0 / fraction
        picked = {ids[int(i * step)] for i in range(max(1, round(len(ids) * fraction))) if int(i * step) < len(ids)}
        return format_tags(picked)

    return CallableBackend(reply)


def random_extractor(seed: int = 0) -> CallableBackend:
    """Uniformly random tag subset; the RNG is keyed on prompt text for determinism."""

    def reply(call: ChatCall) -> str:
        _, segments = read_extractor_prompt(call.user_text)
        rng = random.Random(f"{seed}:{call.user_text}")
        return format_tags(t for t, _ in segments if rng.random() < 0.5)

    return CallableBackend(reply)


def all_tags_extractor() -> CallableBackend:
    return CallableBackend(lambda call: format_tags(t for t, _ in read_extractor_prompt(call.user_text)[1]))


# ---------------------------------------------------------------------------
# generator

_EVIDENCE_RE = re.compile(r"\[Source (\d+)\] (\S+)\n(.*?)(?=\n\n\[Source \d+\] |\n\nRequest:\n)", re.S)


def echo_generator_reply(call: ChatCall) -> str:
    """A markdown answer that restates the request and quotes the evidence."""
    text = call.user_text
    if "\nRequest:\n" in text:
        request = text.rsplit("\nRequest:\n", 1)[1].strip()
    else:
        request = text.strip()
    lines = [f"## {request}", ""]
    blocks = _EVIDENCE_RE.findall(text)
    if not blocks:
        lines.append("No reference material was available; answering from general knowledge.")
    for n, url, body in blocks:
        lines.append(f"- {body.strip()} [{n}]({url})")
    return "\n".join(lines)


def echo_generator() -> CallableBackend:
    return CallableBackend(echo_generator_reply)


# ---------------------------------------------------------------------------
# judges

_ANSWER_A_RE = re.compile(r"\[The Start of Assistant A's Answer\]\n(.*?)\n\[The End of Assistant A's Answer\]", re.S)
_ANSWER_B_RE = re.compile(r"\[The Start of Assistant B's Answer\]\n(.*?)\n\[The End of Assistant B's Answer\]", re.S)
_SINGLE_RE = re.compile(r"\[The Start of Assistant's Answer\]\n(.*?)\n\[The End of Assistant's Answer\]", re.S)


def read_pairwise_prompt(user_text: str) -> tuple[str, str]:
    a = _ANSWER_A_RE.search(user_text)
    b = _ANSWER_B_RE.search(user_text)
    return (a.group(1) if a else ""), (b.group(1) if b else "")


def position_biased_judge(position: str = "A") -> CallableBackend:
    return CallableBackend(lambda call: f"Both answers are fine. [[{position}]]")


def length_judge() -> CallableBackend:
    """Prefers the longer answer wherever it appears; equal lengths tie."""

    def reply(call: ChatCall) -> str:
        a, b = read_pairwise_prompt(call.user_text)
        if len(a) == len(b):
            return "[[C]]"
        return "[[A]]" if len(a) > len(b) else "[[B]]"

    return CallableBackend(reply)


def length_grader(scale: int = 40) -> CallableBackend:
    """Single-answer grader: one point per ``scale`` characters, clamped to 1..10."""

    def reply(call: ChatCall) -> str:
        m = _SINGLE_RE.search(call.user_text)
        answer = m.group(1) if m else ""
        return f"Rating: [[{max(1, min(10, 1 + len(answer) // scale))}]]"

    return CallableBackend(reply)


def today_iso() -> str:
    return date.today().isoformat()


# ---------------------------------------------------------------------------
# annotator


def overlap_annotator(min_overlap: int = 2) -> CallableBackend:
    """Instruction annotator: one summary group per run of overlapping segments."""

    def reply(call: ChatCall) -> str:
        request, segments = read_extractor_prompt(call.user_text)
        wanted = set(content_words(request))
        groups: list[list[tuple[int, str]]] = []
        for t, text in segments:
            if len(wanted & set(content_words(text))) < min_overlap:
                continue
            if groups and groups[-1][-1][0] == t - 1:
                groups[-1].append((t, text))
            else:
                groups.append([(t, text)])
        if not groups:
            return "None"
        relevant = [{"summary": " ".join(g[0][1].split()[:8]), "tags": [f"TAG-{t}" for t, _ in g]} for g in groups]
        return json.dumps({"relevant": relevant})

    return CallableBackend(reply)
