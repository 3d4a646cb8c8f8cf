"""Supervised instruction sets for the extractor model.

Raw (request, page) pairs are sampled from a request log, short pages are
dropped, and each pair is annotated twice with different seeds. Pairs whose
two annotations disagree on the tag set are rejected. Surviving annotations
form Instruction-A (summary + tags); dropping the summaries gives
Instruction-B (tags only). Finally the share of "None" records is pinned.
"""

from __future__ import annotations

import json
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .. import templates
from ..gateway import DEFAULT_TOKENIZER, ChatBackend, ChatCall, RegexTokenizer, complete
from ..mocks import format_tags
from ..segmenter import TaggedDocument, render_tagged

DEFAULT_MIN_TOKENS = 100
DEFAULT_NONE_TARGET = 0.05
DEFAULT_TOLERANCE = 0.005


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class RawPair:
    id: str
    request: str
    doc: TaggedDocument
    tokens: int = -1

    def __post_init__(self):
        if self.tokens < 0:
            object.__setattr__(self, "tokens", DEFAULT_TOKENIZER.count(self.doc.text))


def sample_raw(request_log: Iterable[dict], per_request: int = 2, seed: int = 0, tokenizer: RegexTokenizer = DEFAULT_TOKENIZER) -> list[RawPair]:
    """Up to ``per_request`` pages per logged request, sampled without replacement.

    Log records look like ``{"id", "request", "pages": [page, ...]}`` where a
    page is anything :meth:`TaggedDocument.from_dict` accepts.
    """
    if per_request < 1:
        raise ValueError("per_request must be >= 1")
    out = []
    for n, rec in enumerate(request_log):
        rid = str(rec.get("id", n))
        pages = [TaggedDocument.from_dict(p) for p in rec.get("pages", [])]
        pages = [p for p in pages if p.segments]
        rng = random.Random(f"{seed}:{rid}")
        picked = sorted(rng.sample(range(len(pages)), min(per_request, len(pages))))
        for j in picked:
            doc = pages[j]
            out.append(RawPair(f"{rid}#{j}", rec["request"], doc, tokenizer.count(doc.text)))
    return out


def filter_short(pairs: Sequence[RawPair], min_tokens: int = DEFAULT_MIN_TOKENS) -> tuple[list[RawPair], int]:
    """Drop pairs whose page has fewer than ``min_tokens`` tokens; returns (kept, removed)."""
    if min_tokens < 1:
        raise ValueError("min_tokens must be >= 1")
    kept = [p for p in pairs if p.tokens >= min_tokens]
    return kept, len(pairs) - len(kept)


# ---------------------------------------------------------------------------
# annotation


@dataclass(frozen=True)
class InstructionA:
    id: str
    request: str
    doc: TaggedDocument
    annotations: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        valid = set(self.doc.tag_ids)
        for summary, tags in self.annotations:
            if not tags or any(t not in valid for t in tags):
                raise ValueError(f"{self.id}: annotation tags must be non-empty and valid")

    @property
    def is_none(self) -> bool:
        return not self.annotations

    @property
    def tag_set(self) -> frozenset:
        return frozenset(t for _, tags in self.annotations for t in tags)

    def prompt(self) -> ChatCall:
        return _annotate_call(self.request, self.doc, None)

    def response(self) -> str:
        if self.is_none:
            return "None"
        return json.dumps({"relevant": [{"summary": s, "tags": [f"TAG-{t}" for t in tags]} for s, tags in self.annotations]}, ensure_ascii=False)

    def to_dict(self) -> dict:
        return {
            "schema": "zerodex.instruction_a/v1",
            "id": self.id,
            "request": self.request,
            "url": self.doc.url,
            "tagged_content": render_tagged(self.doc),
            "annotations": [{"summary": s, "tags": list(t)} for s, t in self.annotations],
            "is_none": self.is_none,
            "prompt": self.prompt().user_text,
            "response": self.response(),
        }


@dataclass(frozen=True)
class InstructionB:
    id: str
    request: str
    doc: TaggedDocument
    tag_lists: tuple[tuple[int, ...], ...]

    @property
    def is_none(self) -> bool:
        return not self.tag_lists

    def response(self) -> str:
        return format_tags(t for tags in self.tag_lists for t in tags)

    def to_dict(self) -> dict:
        return {
            "schema": "zerodex.instruction_b/v1",
            "id": self.id,
            "request": self.request,
            "url": self.doc.url,
            "tagged_content": render_tagged(self.doc),
            "tags": [list(t) for t in self.tag_lists],
            "is_none": self.is_none,
            "prompt": templates.render(templates.EXTRACTOR_VERSION, "user", request=self.request, tagged=render_tagged(self.doc)),
            "response": self.response(),
        }


def derive_instruction_b(a: InstructionA) -> InstructionB:
    return InstructionB(a.id, a.request, a.doc, tuple(tags for _, tags in a.annotations))


@dataclass(frozen=True)
class Rejected:
    id: str
    reason: str
    replies: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"schema": "zerodex.rejected/v1", "id": self.id, "reason": self.reason, "replies": list(self.replies)}


class AnnotationFormatError(ValueError):
    pass


_TAG_RE = re.compile(r"^(?:TAG-)?(\d+)$", re.I)


def _annotate_call(request: str, doc: TaggedDocument, seed: int | None, temperature: float = 0.7) -> ChatCall:
    v = templates.ANNOTATE_VERSION
    user = templates.render(v, "user", request=request, tagged=render_tagged(doc))
    return ChatCall(templates.render(v, "system"), user, temperature, seed, 2048)


def parse_annotation(reply: str, doc: TaggedDocument) -> tuple[tuple[str, tuple[int, ...]], ...]:
    """Annotations from an annotator reply; ``None`` or an empty list gives ()."""
    text = (reply or "").strip()
    if text.startswith("```"):
        text = text.strip("`").split("\n", 1)[-1].rsplit("```", 1)[0].strip()
    if text.rstrip(".").lower() == "none":
        return ()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationFormatError(f"not JSON: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("relevant"), list):
        raise AnnotationFormatError("expected an object with a 'relevant' list")
    valid = set(doc.tag_ids)
    out = []
    for item in data["relevant"]:
        if not isinstance(item, dict) or not isinstance(item.get("tags"), list):
            raise AnnotationFormatError("each item needs a 'tags' list")
        tags = []
        for t in item["tags"]:
            m = _TAG_RE.match(str(t).strip())
            if not m or int(m.group(1)) not in valid:
                raise AnnotationFormatError(f"invalid tag {t!r}")
            tags.append(int(m.group(1)))
        if tags:
            out.append((str(item.get("summary", "")).strip(), tuple(sorted(set(tags)))))
    return tuple(out)


def annotate(backend: ChatBackend, pair: RawPair, seeds: tuple[int, int] = (1, 2)) -> InstructionA | Rejected:
    """Annotate twice with different seeds and keep the first run if the tag sets agree."""
    if seeds[0] == seeds[1]:
        raise ValueError("the two annotation seeds must differ")
    replies: list[str] = []
    parsed = []
    for s in seeds:
        try:
            reply = complete(backend, _annotate_call(pair.request, pair.doc, s)).text
        except Exception as exc:  # noqa: BLE001
            return Rejected(pair.id, f"transport: {type(exc).__name__}: {exc}", tuple(replies))
        replies.append(reply)
        try:
            parsed.append(parse_annotation(reply, pair.doc))
        except AnnotationFormatError as exc:
            return Rejected(pair.id, f"malformed: {exc}", tuple(replies))
    sets = [frozenset(t for _, tags in p for t in tags) for p in parsed]
    if sets[0] != sets[1]:
        return Rejected(pair.id, "inconsistent", tuple(replies))
    return InstructionA(pair.id, pair.request, pair.doc, parsed[0])


# ---------------------------------------------------------------------------
# None ratio


def none_ratio(records: Sequence) -> float:
    return sum(1 for r in records if r.is_none) / len(records) if records else 0.0


def enforce_none_ratio(
    records: Sequence,
    target: float = DEFAULT_NONE_TARGET,
    tolerance: float = DEFAULT_TOLERANCE,
    seed: int = 0,
) -> list:
    """Downsample so the None share lands within ``target ± tolerance``.

    Too many None records: keep the largest k with k/(k+P) <= target.
    Too few: keep the largest k' non-None records with N/(N+k') >= target.
    If neither lands in the band, trim both classes, keeping as many records
    as possible. Original order is preserved.
    """
    if not 0 < target < 1:
        raise ValueError("target must be in (0, 1)")
    records = list(records)
    nones = [i for i, r in enumerate(records) if r.is_none]
    others = [i for i, r in enumerate(records) if not r.is_none]
    n, p = len(nones), len(others)
    if records and abs(n / len(records) - target) <= tolerance:
        return records
    if n == 0 or p == 0:
        raise InfeasibleError(f"cannot reach a None ratio of {target} with {n} None and {p} other records")
    t = Fraction(target).limit_denominator(10**6)
    tol = Fraction(tolerance).limit_denominator(10**6)
    if Fraction(n, n + p) > t:
        kn, ko = int(t * p / (1 - t)), p
    else:
        kn, ko = n, int(n * (1 - t) / t)
    if kn == 0 or abs(Fraction(kn, kn + ko) - t) > tol:
        # one class alone cannot land in the band (small corpora); trim both
        kn, ko = _two_class_counts(n, p, t, tol)
    rng = random.Random(seed)
    keep = set(rng.sample(nones, kn)) | set(rng.sample(others, ko))
    return [records[i] for i in sorted(keep)]


def _two_class_counts(n: int, p: int, t: Fraction, tol: Fraction) -> tuple[int, int]:
    """Most records kept overall with the None share inside ``t ± tol``."""
    best = None
    for kn in range(1, n + 1):
        ko = p
        lo = t - tol
        if lo > 0:
            ko = min(p, int(kn * (1 - lo) / lo))  # largest ko with kn/(kn+ko) >= lo
        if ko < 0 or abs(Fraction(kn, kn + ko) - t) > tol:
            continue
        key = (kn + ko, -abs(Fraction(kn, kn + ko) - t))
        if best is None or key > best[0]:
            best = (key, kn, ko)
    if best is None:
        raise InfeasibleError(f"no subset of {n} None and {p} other records has a None ratio of {t}±{tol}")
    return best[1], best[2]


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class InstructionRun:
    sampled: int
    short_removed: int
    annotated: int
    instructions_a: list[InstructionA]
    instructions_b: list[InstructionB]
    rejected: list[Rejected]
    before_ratio: float
    seed: int
    params: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        return {
            "schema": "zerodex.instruction_manifest/v1",
            "seed": self.seed,
            "params": self.params,
            "counts": {
                "sampled": self.sampled,
                "filtered_short": self.short_removed,
                "annotated": self.annotated,
                "accepted": self.annotated - len(self.rejected),
                "rejected": len(self.rejected),
                "instruction_a": len(self.instructions_a),
                "instruction_b": len(self.instructions_b),
            },
            "none_ratio_before": self.before_ratio,
            "none_ratio": none_ratio(self.instructions_a),
        }


def prepare_instructions(
    request_log: Iterable[dict],
    backend: ChatBackend,
    *,
    seed: int = 0,
    per_request: int = 2,
    min_tokens: int = DEFAULT_MIN_TOKENS,
    none_target: float = DEFAULT_NONE_TARGET,
    tolerance: float = DEFAULT_TOLERANCE,
    max_parallel: int = 4,
    out_dir: str | Path | None = None,
) -> InstructionRun:
    sampled = sample_raw(request_log, per_request, seed)
    kept, removed = filter_short(sampled, min_tokens)
    seeds = (2 * seed + 1, 2 * seed + 2)
    with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
        outcomes = list(pool.map(lambda pr: annotate(backend, pr, seeds), kept))
    accepted = [o for o in outcomes if isinstance(o, InstructionA)]
    rejected = [o for o in outcomes if isinstance(o, Rejected)]
    before = none_ratio(accepted)
    final_a = enforce_none_ratio(accepted, none_target, tolerance, seed) if accepted else []
    run = InstructionRun(
        len(sampled), removed, len(kept), final_a, [derive_instruction_b(a) for a in final_a], rejected, before, seed,
        {"per_request": per_request, "min_tokens": min_tokens, "none_target": none_target, "tolerance": tolerance},
    )
    if out_dir is not None:
        write_instructions(run, out_dir)
    return run


def _write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_instructions(run: InstructionRun, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "instruction_a.jsonl", (a.to_dict() for a in run.instructions_a))
    _write_jsonl(out / "instruction_b.jsonl", (b.to_dict() for b in run.instructions_b))
    _write_jsonl(out / "rejected.jsonl", (r.to_dict() for r in run.rejected))
    (out / "manifest.json").write_text(json.dumps(run.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
