"""Needle-in-a-haystack benchmark cases over tagged filler text."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Sequence

from ..segmenter import DELIMITERS, TaggedDocument, normalize, segment
from .metrics import as_tagset

CATEGORIES = ("base", "reasoning", "multi-question", "multi-answer", "real-world")
CASE_SCHEMA = "zerodex.case/v1"


class HaystackTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class NeedleSpec:
    """Needle sentences plus the question(s) they answer.

    ``answers[q]`` lists the needle indices that answer ``questions[q]``.
    """

    name: str
    category: str
    needles: tuple[str, ...]
    questions: tuple[str, ...]
    answers: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "needles", tuple(normalize(n) for n in self.needles))
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "answers", tuple(tuple(a) for a in self.answers))
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if not self.needles or not self.questions:
            raise ValueError("a needle spec needs needles and questions")
        if len(self.answers) != len(self.questions):
            raise ValueError("one answer subset per question")
        for subset in self.answers:
            if not subset or any(not 0 <= i < len(self.needles) for i in subset):
                raise ValueError("answer subsets must name existing needles")
        for n in self.needles:
            if len(segment(n)) != 1 or n[-1] not in DELIMITERS:
                raise ValueError(f"needle must be exactly one sentence: {n!r}")
        if self.category == "multi-answer" and len(self.gold_needles) < 2:
            raise ValueError("multi-answer specs need at least two gold needles")
        if self.category == "multi-question" and len(self.questions) < 2:
            raise ValueError("multi-question specs need at least two questions")

    @property
    def request(self) -> str:
        return " ".join(self.questions)

    @property
    def gold_needles(self) -> tuple[int, ...]:
        return tuple(sorted({i for subset in self.answers for i in subset}))

    @classmethod
    def from_dict(cls, d: dict) -> "NeedleSpec":
        questions = d.get("questions") or [d["question"]]
        answers = d.get("answers") or [list(range(len(d["needles"])))]
        return cls(d.get("name", ""), d["category"], tuple(d["needles"]), tuple(questions), tuple(map(tuple, answers)))


def load_needles(path) -> list[NeedleSpec]:
    with open(path, encoding="utf-8") as fh:
        return [NeedleSpec.from_dict(json.loads(line)) for line in fh if line.strip()]


@dataclass
class BenchmarkCase:
    id: str
    request: str
    docs: list[TaggedDocument]
    gold: list  # per doc: tuple of tag ids or None
    category: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if len(self.gold) != len(self.docs):
            raise ValueError("one gold entry per document")
        fixed = []
        for doc, g in zip(self.docs, self.gold):
            g = as_tagset(g)
            if g is not None and any(not 1 <= t <= doc.m for t in g):
                raise ValueError(f"case {self.id}: gold tag outside 1..{doc.m}")
            fixed.append(tuple(sorted(g)) if g else None)
        self.gold = fixed

    def to_dict(self) -> dict:
        return {
            "schema": CASE_SCHEMA,
            "id": self.id,
            "category": self.category,
            "request": self.request,
            "docs": [d.to_dict() for d in self.docs],
            "gold": [list(g) if g else None for g in self.gold],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkCase":
        docs = [TaggedDocument.from_dict(x) for x in d["docs"]]
        return cls(str(d["id"]), d["request"], docs, d.get("gold") or [None] * len(docs), d["category"], d.get("meta", {}))


def write_cases(cases: Iterable[BenchmarkCase], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for c in cases:
            fh.write(json.dumps(c.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_cases(path) -> list[BenchmarkCase]:
    with open(path, encoding="utf-8") as fh:
        return [BenchmarkCase.from_dict(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# filler text

_SUBJECTS = ["The committee", "A traveller", "The old library", "Our neighbour", "The river", "A small bakery",
             "The orchestra", "The garden club", "A local farmer", "The museum guide", "The harbour", "A young painter"]
_VERBS = ["described", "remembered", "questioned", "admired", "repaired", "visited", "painted", "studied",
          "welcomed", "ignored", "measured", "celebrated"]
_OBJECTS = ["the autumn festival", "a forgotten map", "the northern road", "an unusual clock", "the winter harvest",
            "a quiet courtyard", "the stone bridge", "a box of letters", "the morning market", "a broken lantern",
            "the hillside vineyard", "an empty theatre"]
_TAILS = ["with great patience", "before the rain started", "for the third time", "without saying a word",
          "after a long journey", "in the late afternoon", "despite the noise", "as the bells rang",
          "under a grey sky", "while the town slept"]


def default_haystack(n_sentences: int = 4000, seed: int = 13) -> list[str]:
    """Deterministic filler: plain declarative sentences with no digits."""
    rng = random.Random(seed)
    return [
        f"{rng.choice(_SUBJECTS)} {rng.choice(_VERBS)} {rng.choice(_OBJECTS)} {rng.choice(_TAILS)}."
        for _ in range(n_sentences)
    ]


# ---------------------------------------------------------------------------
# generation


def _filler_for_length(haystack: Sequence[str], length: int, needle_chars: int) -> list[str]:
    budget = max(0, length - needle_chars)
    out: list[str] = []
    size = 0
    for s in haystack:
        if size >= budget:
            break
        out.append(s)
        size += len(s) + 1
    if size < budget:
        raise HaystackTooSmall(f"haystack has {size} chars, need {budget}")
    return out


def insertion_points(n_filler: int, n_needles: int, depth: float) -> list[int]:
    """Filler indices before which each needle goes.

    The first needle is anchored at ``depth`` of the filler; later needles are
    spread evenly over the filler that follows the anchor.
    """
    if not 0.0 <= depth <= 1.0:
        raise ValueError("depth must be in [0, 1]")
    anchor = round(depth * n_filler)
    span = n_filler - anchor
    step = span // n_needles if n_needles else 0
    return [anchor + j * step for j in range(n_needles)]


def build_case(spec: NeedleSpec, haystack: Sequence[str], length: int, depth: float, *, case_id: str | None = None) -> BenchmarkCase:
    needle_chars = sum(len(n) + 1 for n in spec.needles)
    filler = _filler_for_length(haystack, length, needle_chars)
    needle_set = set(spec.needles)
    if needle_set & set(normalize(s) for s in filler):
        raise ValueError("a filler sentence duplicates a needle")
    points = insertion_points(len(filler), len(spec.needles), depth)
    sentences: list[str] = []
    j = 0
    for i in range(len(filler) + 1):
        while j < len(points) and points[j] == i:
            sentences.append(spec.needles[j])
            j += 1
        if i < len(filler):
            sentences.append(filler[i])
    doc = TaggedDocument.from_text(" ".join(sentences), url=f"synthetic://{spec.name or spec.category}")

    # recover needle tags by exact text match after segmentation
    tag_of: dict[str, int] = {}
    for seg in doc.segments:
        if seg.text in needle_set:
            if seg.text in tag_of:
                raise ValueError(f"needle appears twice: {seg.text!r}")
            tag_of[seg.text] = seg.tag_id
    missing = needle_set - set(tag_of)
    if missing:
        raise ValueError(f"needles lost in segmentation: {sorted(missing)}")
    gold = tuple(sorted(tag_of[spec.needles[i]] for i in spec.gold_needles))
    cid = case_id or f"{spec.name or spec.category}-L{length}-D{depth:g}"
    meta = {"length": length, "depth": depth, "needle": spec.name, "chars": len(doc.text)}
    return BenchmarkCase(cid, spec.request, [doc], [gold], spec.category, meta)


def generate_synthetic(
    haystack: Sequence[str],
    needles: Sequence[NeedleSpec],
    context_lengths: Sequence[int],
    depths: Sequence[float],
) -> list[BenchmarkCase]:
    """One case per (needle spec, context length, depth)."""
    if not needles or not context_lengths or not depths:
        return []
    needed = max(context_lengths)
    if sum(len(s) + 1 for s in haystack) < needed - max(sum(len(n) + 1 for n in s.needles) for s in needles):
        raise HaystackTooSmall(f"haystack too small for context length {needed}")
    return [build_case(spec, haystack, length, depth) for spec, length, depth in product(needles, context_lengths, depths)]
