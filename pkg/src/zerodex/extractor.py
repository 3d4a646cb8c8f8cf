"""Tag-level evidence extraction and enriched prompt assembly."""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from . import templates
from .gateway import BudgetError, ChatBackend, ChatCall, Usage, complete
from .request_parser import InferenceRequest
from .reranker import RankedSelection
from .segmenter import Segment, TaggedDocument, render_window, resolve_tags

DEFAULT_PROMPT_CAP = 24000  # characters of rendered content per extractor call
DEFAULT_MAX_PARALLEL = 4

_TAG_TOKEN_RE = re.compile(r"(?:TAG-)?(\d+)", re.I)


@dataclass(frozen=True)
class ExtractionResult:
    doc_index: int
    tags: tuple[int, ...] | None
    warnings: tuple[str, ...] = ()
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self):
        if self.tags is not None and not self.tags:
            raise ValueError("an empty tag set must be represented as None")

    def to_dict(self) -> dict:
        return {
            "schema": "zerodex.extraction/v1",
            "doc_index": self.doc_index,
            "tags": list(self.tags) if self.tags is not None else None,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class MergedText:
    blocks: tuple[tuple[str, str], ...] = ()

    @property
    def total_chars(self) -> int:
        return sum(len(text) for _, text in self.blocks)

    def __bool__(self) -> bool:
        return bool(self.blocks)


@dataclass(frozen=True)
class EnrichedPrompt:
    request_text: str
    merged: MergedText = field(default_factory=MergedText)
    template_version: str = templates.GENERATION_VERSION

    @property
    def evidence(self) -> str:
        return render_evidence(self.merged)

    @property
    def system_text(self) -> str:
        return templates.render(self.template_version, "system")

    @property
    def user_text(self) -> str:
        if self.merged:
            return templates.render(self.template_version, "user", evidence=self.evidence, request=self.request_text)
        return templates.render(self.template_version, "user_bare", request=self.request_text)

    @property
    def text(self) -> str:
        return self.system_text + "\n\n" + self.user_text

    def to_call(self, max_output_tokens: int = 2048, temperature: float = 0.0, seed: int | None = None) -> ChatCall:
        return ChatCall(self.system_text, self.user_text, temperature, seed, max_output_tokens)


def render_evidence(merged: MergedText) -> str:
    return "\n\n".join(f"[Source {i}] {url}\n{text}" for i, (url, text) in enumerate(merged.blocks, start=1))


# ---------------------------------------------------------------------------
# prompts


def _call_for(request: InferenceRequest, segments: Sequence[Segment]) -> ChatCall:
    user = templates.render(templates.EXTRACTOR_VERSION, "user", request=request.text, tagged=render_window(segments))
    # reply size bounded by the tag list, not by segment length
    budget = 8 + 4 * len(segments)
    return ChatCall(templates.render(templates.EXTRACTOR_VERSION, "system"), user, 0.0, None, budget)


def windows(doc: TaggedDocument, prompt_cap: int = DEFAULT_PROMPT_CAP) -> list[tuple[Segment, ...]]:
    """Split a document into runs of whole segments whose rendering fits ``prompt_cap``."""
    out: list[tuple[Segment, ...]] = []
    cur: list[Segment] = []
    size = 0
    for seg in doc.segments:
        piece = len(seg.text) + len(f"<TAG-{seg.tag_id}></TAG-{seg.tag_id}>") + 1
        if cur and size + piece > prompt_cap:
            out.append(tuple(cur))
            cur, size = [], 0
        cur.append(seg)
        size += piece
    if cur:
        out.append(tuple(cur))
    return out


def build_extractor_calls(request: InferenceRequest, doc: TaggedDocument, prompt_cap: int = DEFAULT_PROMPT_CAP) -> list[ChatCall]:
    if not doc.segments:
        raise ValueError("document has no segments")
    return [_call_for(request, w) for w in windows(doc, prompt_cap)]


def build_extractor_prompt(request: InferenceRequest, doc: TaggedDocument) -> ChatCall:
    if not doc.segments:
        raise ValueError("document has no segments")
    return _call_for(request, doc.segments)


# ---------------------------------------------------------------------------
# replies


def parse_extractor_reply(reply_text: str, doc: TaggedDocument | None = None, *, valid_ids: Sequence[int] | None = None, doc_index: int = 0) -> ExtractionResult:
    """Never raises: anything unusable degrades to ``None`` with a warning."""
    if valid_ids is None:
        valid_ids = doc.tag_ids if doc is not None else ()
    valid = set(valid_ids)
    text = (reply_text or "").strip()
    if text.rstrip(".").strip().lower() == "none":
        return ExtractionResult(doc_index, None)
    warnings: list[str] = []
    found: list[int] = []
    for m in _TAG_TOKEN_RE.finditer(text):
        tag = int(m.group(1))
        if tag in valid:
            if tag not in found:
                found.append(tag)
        else:
            warnings.append(f"dropped unknown tag {tag}")
    if not found:
        warnings.append("no valid tags in reply" if text else "empty reply")
        return ExtractionResult(doc_index, None, tuple(warnings))
    return ExtractionResult(doc_index, tuple(sorted(found)), tuple(warnings))


# ---------------------------------------------------------------------------
# extraction


def extract_document(
    backend: ChatBackend,
    request: InferenceRequest,
    doc: TaggedDocument,
    doc_index: int = 0,
    *,
    prompt_cap: int = DEFAULT_PROMPT_CAP,
    usage: Usage | None = None,
    retry_backoff: float = 0.5,
) -> ExtractionResult:
    """Extract one document, window by window, unioning the tag sets."""
    if not doc.segments:
        return ExtractionResult(doc_index, None, ("document has no segments",))
    tags: set[int] = set()
    warnings: list[str] = []
    n_in = n_out = 0
    for window in windows(doc, prompt_cap):
        call = _call_for(request, window)
        try:
            reply = complete(backend, call, usage=usage, retry_backoff=retry_backoff)
        except BudgetError as exc:
            reply = exc.reply
            warnings.append("extractor reply truncated")
        except Exception as exc:  # noqa: BLE001 - degrade this window to None
            warnings.append(f"extractor call failed: {type(exc).__name__}: {exc}")
            continue
        n_in += reply.input_tokens
        n_out += reply.output_tokens
        res = parse_extractor_reply(reply.text, valid_ids=[s.tag_id for s in window], doc_index=doc_index)
        warnings.extend(res.warnings)
        if res.tags:
            tags.update(res.tags)
    return ExtractionResult(doc_index, tuple(sorted(tags)) or None, tuple(warnings), n_in, n_out)


def extract_all(
    backend: ChatBackend,
    request: InferenceRequest,
    selection: RankedSelection,
    docs: Sequence[TaggedDocument],
    *,
    max_parallel: int = DEFAULT_MAX_PARALLEL,
    prompt_cap: int = DEFAULT_PROMPT_CAP,
    usage: Usage | None = None,
    retry_backoff: float = 0.5,
) -> list[ExtractionResult]:
    """One result per selected document, in selection order."""
    if not len(selection):
        raise ValueError("empty selection")
    indices = selection.doc_indices

    def run(i: int) -> ExtractionResult:
        try:
            return extract_document(backend, request, docs[i], i, prompt_cap=prompt_cap, usage=usage, retry_backoff=retry_backoff)
        except Exception as exc:  # noqa: BLE001
            return ExtractionResult(i, None, (f"extraction failed: {exc}",))

    with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
        return list(pool.map(run, indices))


def merge(docs: Sequence[TaggedDocument], results: Sequence[ExtractionResult]) -> MergedText:
    blocks = []
    for res in results:
        if res.tags is None:
            continue
        doc = docs[res.doc_index]
        blocks.append((doc.url, resolve_tags(doc, res.tags)))
    return MergedText(tuple(blocks))


def merge_and_assemble(request: InferenceRequest, docs: Sequence[TaggedDocument], results: Sequence[ExtractionResult]) -> EnrichedPrompt:
    return EnrichedPrompt(request.text, merge(docs, results))
