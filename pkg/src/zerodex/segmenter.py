"""Finite-state segmentation of page text into numbered ``<TAG-i>`` units.

The walk is a single left-to-right pass over whitespace-normalized text with
three states: inside a segment, inside a run of sentence delimiters, and
absorbing closing quotes/brackets after such a run. A period with digits on
both sides is a decimal point, not a boundary.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

DELIMITERS = frozenset(".!?。！？")
CLOSERS = frozenset("\"')]}”’»」』）】》〉")
MAX_SEGMENT_CHARS = 2000

_IN_TEXT, _IN_DELIMS, _IN_CLOSERS = range(3)


class UnknownTagError(KeyError):
    def __init__(self, tag_id: int):
        super().__init__(tag_id)
        self.tag_id = tag_id

    def __str__(self) -> str:
        return f"unknown tag id {self.tag_id}"


class TagFormatError(ValueError):
    """Tagged serialization could not be parsed."""


@dataclass(frozen=True)
class Segment:
    tag_id: int
    text: str
    # whitespace that preceded this segment in the normalized body ("" or " ")
    gap: str = ""

    def __post_init__(self):
        if self.tag_id < 1:
            raise ValueError("tag_id must be positive")
        if not self.text.strip():
            raise ValueError("segment text must be non-empty")


@dataclass(frozen=True)
class TaggedDocument:
    url: str = ""
    snippet: str = ""
    segments: tuple[Segment, ...] = ()
    source: str = "main"
    engine_rank: int = 1

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        for expected, seg in enumerate(self.segments, start=1):
            if seg.tag_id != expected:
                raise ValueError(f"tag ids must be dense 1..m, got {seg.tag_id} at position {expected}")
            if seg.gap not in ("", " ") or (expected == 1 and seg.gap):
                raise ValueError("segment gap must be '' or ' ' and empty for the first segment")

    @classmethod
    def from_text(cls, body_text: str, **meta) -> "TaggedDocument":
        return cls(segments=tuple(segment(body_text)), **meta)

    @classmethod
    def from_sentences(cls, sentences: Iterable[str], **meta) -> "TaggedDocument":
        """Tag pre-split sentences one per segment (used by dataset converters)."""
        segs = []
        for s in sentences:
            s = normalize(s)
            if s:
                segs.append(Segment(len(segs) + 1, s, " " if segs else ""))
        return cls(segments=tuple(segs), **meta)

    @property
    def m(self) -> int:
        return len(self.segments)

    @property
    def tag_ids(self) -> range:
        return range(1, len(self.segments) + 1)

    @property
    def text(self) -> str:
        """The normalized body text the segments were cut from."""
        return "".join(s.gap + s.text for s in self.segments)

    def to_dict(self) -> dict:
        return {
            "schema": "zerodex.tagged/v1",
            "url": self.url,
            "snippet": self.snippet,
            "source": self.source,
            "engine_rank": self.engine_rank,
            "segments": [{"tag_id": s.tag_id, "text": s.text, "gap": s.gap} for s in self.segments],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaggedDocument":
        """Accepts either a ``segments`` list or a ``body_text`` to segment."""
        meta = {k: data[k] for k in ("url", "snippet", "source", "engine_rank") if k in data}
        if "segments" in data:
            segs = tuple(Segment(int(s["tag_id"]), s["text"], s.get("gap", " " if i else "")) for i, s in enumerate(data["segments"]))
            return cls(segments=segs, **meta)
        if "tagged" in data:
            return parse_tagged(data["tagged"], **meta)
        return cls.from_text(data.get("body_text", ""), **meta)


def normalize(text: str) -> str:
    """Collapse every whitespace run to one space and trim the ends."""
    return " ".join(text.split())


def _is_digit(ch: str) -> bool:
    return ch.isdigit()


def segment(body_text: str, max_segment_chars: int = MAX_SEGMENT_CHARS) -> list[Segment]:
    if max_segment_chars < 1:
        raise ValueError("max_segment_chars must be >= 1")
    text = normalize(body_text)
    n = len(text)
    out: list[Segment] = []
    gap = ""
    start = 0
    last_space = -1  # index of the most recent space inside the current segment
    state = _IN_TEXT
    i = 0

    def close(end: int) -> None:
        nonlocal gap, start, last_space, state
        out.append(Segment(len(out) + 1, text[start:end], gap))
        if end < n and text[end] == " ":
            gap, start = " ", end + 1
        else:
            gap, start = "", end
        last_space = -1
        state = _IN_TEXT

    while i < n:
        ch = text[i]
        if state == _IN_TEXT:
            if ch in DELIMITERS:
                decimal = ch == "." and i > 0 and i + 1 < n and _is_digit(text[i - 1]) and _is_digit(text[i + 1])
                if not decimal:
                    state = _IN_DELIMS
            elif ch == " ":
                last_space = i
        elif state == _IN_DELIMS:
            if ch in CLOSERS:
                state = _IN_CLOSERS
            elif ch not in DELIMITERS:
                close(i)
                continue
        else:  # _IN_CLOSERS
            if ch not in CLOSERS:
                close(i)
                continue
        i += 1
        if i - start >= max_segment_chars and i < n:
            # force split before the cap, at the last space if there is one
            if last_space > start:
                close(last_space)
                i = start
            else:
                cut = i
                if cut - 1 > start and text[cut - 1] == "." and _is_digit(text[cut - 2]) and _is_digit(text[cut]):
                    cut -= 1  # never leave a decimal point at a segment end
                close(cut)
                i = start
    if start < n:
        out.append(Segment(len(out) + 1, text[start:n], gap))
    return out


def _render(segments: Sequence[Segment]) -> str:
    parts = []
    for k, seg in enumerate(segments):
        if k and seg.gap:
            parts.append("\n")
        parts.append(f"<TAG-{seg.tag_id}>{seg.text}</TAG-{seg.tag_id}>")
    return "".join(parts)


def render_tagged(doc: TaggedDocument) -> str:
    """Serialize as ``<TAG-1>..</TAG-1>\\n<TAG-2>..</TAG-2>``.

    A newline between two tag pairs stands for the single space that separated
    the segments in the body; segments that were directly adjacent (typical for
    CJK text) are rendered back to back, so the serialization is lossless.
    """
    return _render(doc.segments)


def render_window(segments: Sequence[Segment]) -> str:
    """Render a contiguous run of segments keeping their original tag ids."""
    return _render(segments)


def parse_tagged(rendered: str, **meta) -> TaggedDocument:
    segs: list[Segment] = []
    pos = 0
    n = len(rendered)
    while pos < n:
        tag_id = len(segs) + 1
        gap = ""
        if segs and rendered.startswith("\n", pos):
            gap = " "
            pos += 1
        open_tag, close_tag = f"<TAG-{tag_id}>", f"</TAG-{tag_id}>"
        if not rendered.startswith(open_tag, pos):
            raise TagFormatError(f"expected {open_tag} at offset {pos}")
        body_start = pos + len(open_tag)
        end = rendered.find(close_tag, body_start)
        if end < 0:
            raise TagFormatError(f"missing {close_tag}")
        segs.append(Segment(tag_id, rendered[body_start:end], gap))
        pos = end + len(close_tag)
    return TaggedDocument(segments=tuple(segs), **meta)


_MARKER_RE = re.compile(r"</?TAG-\d+>")


def strip_tags(rendered: str) -> str:
    """Remove tag markers, mapping the inter-pair newline back to a space."""
    return _MARKER_RE.sub("", rendered.replace("\n", " "))


def resolve_tags(doc: TaggedDocument, tag_ids: Iterable[int]) -> str:
    """Text of the named segments in ascending id order.

    Adjacent segments are joined with the whitespace that originally separated
    them, so resolving every id yields the full normalized body; non-adjacent
    segments are joined with a single space.
    """
    ids = sorted(set(tag_ids))
    for t in ids:
        if not 1 <= t <= doc.m:
            raise UnknownTagError(t)
    parts: list[str] = []
    prev = None
    for t in ids:
        seg = doc.segments[t - 1]
        if prev is not None:
            parts.append(seg.gap if t == prev + 1 else " ")
        parts.append(seg.text)
        prev = t
    return "".join(parts)
