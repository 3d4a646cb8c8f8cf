"""End-to-end request handling: parse, search, rerank, extract, merge, generate."""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .extractor import (
    DEFAULT_MAX_PARALLEL,
    DEFAULT_PROMPT_CAP,
    EnrichedPrompt,
    extract_all,
    merge_and_assemble,
)
from .gateway import (
    DEFAULT_TOKENIZER,
    BudgetError,
    ChatBackend,
    EmbedBackend,
    HashEmbedder,
    RegexTokenizer,
    Tokenizer,
    Usage,
    complete,
)
from .request_parser import InferenceRequest, ParseOutcome, decide_and_extract
from .reranker import DEFAULT_K, EMBED_INPUT_CAP, rerank
from .segmenter import MAX_SEGMENT_CHARS, TaggedDocument, segment
from .web_search import (
    DEFAULT_MAX_PARALLEL_FETCH,
    DEFAULT_N_PER_LIST,
    DEFAULT_SIZE_CAP,
    DEFAULT_TIMEOUT,
    PER_HOST_LIMIT,
    Fetcher,
    HttpFetcher,
    PlainDocument,
    SearchEngineClient,
    gather,
)
from . import templates

logger = logging.getLogger(__name__)

STAGES = ("parse", "search", "rerank", "extract", "merge", "generate")


class GenerationError(RuntimeError):
    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class PipelineConfig:
    k: int = DEFAULT_K
    n_per_list: int = DEFAULT_N_PER_LIST
    fetch_timeout: float = DEFAULT_TIMEOUT
    fetch_size_cap: int = DEFAULT_SIZE_CAP
    max_parallel_fetch: int = DEFAULT_MAX_PARALLEL_FETCH
    per_host_fetch: int = PER_HOST_LIMIT
    max_parallel_extract: int = DEFAULT_MAX_PARALLEL
    max_parallel_embed: int = 4
    embed_input_cap: int = EMBED_INPUT_CAP
    extract_prompt_cap: int = DEFAULT_PROMPT_CAP
    max_segment_chars: int = MAX_SEGMENT_CHARS
    generation_max_tokens: int = 2048
    generation_temperature: float = 0.0
    generation_seed: int | None = None
    retry_backoff: float = 0.5
    generation_template: str = templates.GENERATION_VERSION

    def __post_init__(self):
        for name in (
            "k", "n_per_list", "fetch_size_cap", "max_parallel_fetch", "per_host_fetch",
            "max_parallel_extract", "max_parallel_embed", "embed_input_cap", "extract_prompt_cap",
            "max_segment_chars", "generation_max_tokens",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.fetch_timeout <= 0:
            raise ValueError("fetch_timeout must be positive")


@dataclass
class Backends:
    parser: ChatBackend
    extractor: ChatBackend
    generator: ChatBackend
    embedder: EmbedBackend = field(default_factory=HashEmbedder)
    engines: Sequence[SearchEngineClient] = ()
    fetcher: Fetcher | None = None
    tokenizer: RegexTokenizer = DEFAULT_TOKENIZER
    judge: ChatBackend | None = None


@dataclass
class StageRecord:
    stage: str
    duration_ms: float = 0.0
    counts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    events: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def to_dict(self, timings: bool = True) -> dict:
        out = {"stage": self.stage}
        if timings:
            out["duration_ms"] = round(self.duration_ms, 3)
        out.update(counts=self.counts, warnings=self.warnings, flags=self.flags, events=self.events)
        return out


@dataclass
class Answer:
    request_id: str
    text: str
    augmented: bool
    trace: list[StageRecord]
    token_usage: dict[str, dict]
    sources: list[str] = field(default_factory=list)

    def to_dict(self, timings: bool = True) -> dict:
        return {
            "schema": "zerodex.answer/v1",
            "id": self.request_id,
            "text": self.text,
            "augmented": self.augmented,
            "sources": self.sources,
            "token_usage": self.token_usage,
            "trace": [r.to_dict(timings) for r in self.trace],
        }

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), ensure_ascii=False, sort_keys=True, indent=2)


class _Trace:
    def __init__(self, clock: Callable[[], float]):
        self.clock = clock
        self.records: list[StageRecord] = []

    @contextmanager
    def stage(self, name: str):
        rec = StageRecord(name)
        t0 = self.clock()
        try:
            yield rec
        finally:
            rec.duration_ms = (self.clock() - t0) * 1000.0
            self.records.append(rec)


def count_prompt_tokens(prompt: EnrichedPrompt, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> int:
    return tokenizer.count(prompt.system_text) + tokenizer.count(prompt.user_text)


def tag_documents(docs: Sequence[PlainDocument], max_segment_chars: int = MAX_SEGMENT_CHARS) -> list[TaggedDocument]:
    out = []
    for d in docs:
        segs = segment(d.body_text, max_segment_chars)
        if segs:
            out.append(TaggedDocument(d.url, d.snippet, tuple(segs), d.source, d.engine_rank))
    return out


def answer(
    request: InferenceRequest,
    config: PipelineConfig,
    backends: Backends,
    *,
    clock: Callable[[], float] = time.perf_counter,
) -> Answer:
    """Run the whole pipeline for one request.

    Every stage before generation degrades to an unaugmented answer on failure;
    only a failing generator raises :class:`GenerationError`.
    """
    trace = _Trace(clock)
    usage = {"parse": Usage(), "extract": Usage(), "generate": Usage()}
    prompt = EnrichedPrompt(request.text, template_version=config.generation_template)
    sources: list[str] = []

    with trace.stage("parse") as rec:
        try:
            outcome = decide_and_extract(
                backends.parser, request, request.received_at,
                trace=rec.events, usage=usage["parse"], retry_backoff=config.retry_backoff,
            )
        except Exception as exc:  # noqa: BLE001
            rec.warnings.append(f"parser failed: {type(exc).__name__}: {exc}")
            rec.flags.append("parser_failed")
            outcome = ParseOutcome.no_search()
        rec.counts = {
            "needs_search": outcome.needs_search,
            "keyword_lists": len(outcome.keyword_lists),
            "time_mode": outcome.time_annotation.mode,
        }
        if outcome.main is not None:
            rec.counts["keywords"] = list(outcome.main.keywords)

    tagged: list[TaggedDocument] = []
    selection = None
    results = None
    if outcome.needs_search:
        with trace.stage("search") as rec:
            try:
                plain = gather(
                    outcome, backends.engines, config.n_per_list,
                    backends.fetcher or HttpFetcher(config.fetch_timeout, config.fetch_size_cap),
                    max_parallel=config.max_parallel_fetch, per_host=config.per_host_fetch, trace=rec.events,
                )
            except Exception as exc:  # noqa: BLE001
                rec.warnings.append(f"gather failed: {exc}")
                plain = []
            tagged = tag_documents(plain, config.max_segment_chars)
            failures = sum(1 for e in rec.events if e.get("event") == "fetch_failed")
            rec.counts = {"documents": len(plain), "fetch_failures": failures, "tagged_documents": len(tagged)}
            if not tagged:
                rec.flags.append("no_documents")

    if tagged:
        with trace.stage("rerank") as rec:
            try:
                selection = rerank(
                    backends.embedder, outcome, tagged, config.k,
                    input_cap=config.embed_input_cap, max_workers=config.max_parallel_embed, trace=rec.events,
                )
                rec.counts = {"candidates": len(selection.candidates), "selected": len(selection)}
            except Exception as exc:  # noqa: BLE001
                rec.warnings.append(f"rerank failed: {type(exc).__name__}: {exc}")
                rec.flags.append("rerank_failed")

    if selection is not None and len(selection):
        with trace.stage("extract") as rec:
            results = extract_all(
                backends.extractor, request, selection, tagged,
                max_parallel=config.max_parallel_extract, prompt_cap=config.extract_prompt_cap,
                usage=usage["extract"], retry_backoff=config.retry_backoff,
            )
            for r in results:
                rec.warnings.extend(f"doc {r.doc_index}: {w}" for w in r.warnings)
            rec.counts = {
                "documents": len(results),
                "contributing": sum(1 for r in results if r.tags is not None),
                "tags": {str(r.doc_index): (list(r.tags) if r.tags else None) for r in results},
            }

        with trace.stage("merge") as rec:
            prompt = merge_and_assemble(request, tagged, results)
            prompt = EnrichedPrompt(prompt.request_text, prompt.merged, config.generation_template)
            sources = [url for url, _ in prompt.merged.blocks]
            rec.counts = {
                "blocks": len(prompt.merged.blocks),
                "evidence_chars": prompt.merged.total_chars,
                "prompt_tokens": count_prompt_tokens(prompt, backends.tokenizer),
            }
            if not prompt.merged:
                rec.flags.append("no_evidence")

    augmented = bool(prompt.merged)
    with trace.stage("generate") as rec:
        call = prompt.to_call(config.generation_max_tokens, config.generation_temperature, config.generation_seed)
        try:
            reply = complete(backends.generator, call, usage=usage["generate"], retry_backoff=config.retry_backoff)
        except BudgetError as exc:
            reply = exc.reply
            rec.warnings.append("generation truncated at max_output_tokens")
        except Exception as exc:  # noqa: BLE001
            rec.warnings.append(f"generation failed: {type(exc).__name__}: {exc}")
            raise GenerationError(str(exc), trace.records) from exc
        rec.counts = {"augmented": augmented, "prompt_tokens": reply.input_tokens}

    token_usage = {stage: u.as_dict() for stage, u in usage.items()}
    token_usage["total"] = {
        "input_tokens": sum(u.input_tokens for u in usage.values()),
        "output_tokens": sum(u.output_tokens for u in usage.values()),
        "calls": sum(u.calls for u in usage.values()),
    }
    return Answer(request.id, reply.text, augmented, trace.records, token_usage, sources)
