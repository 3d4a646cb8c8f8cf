"""Comparison systems: naive concatenation and a chunk-and-embed vector store."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..extractor import EnrichedPrompt, MergedText
from ..gateway import DEFAULT_TOKENIZER, EmbedBackend, RegexTokenizer, embed
from ..segmenter import TaggedDocument


def _body(doc) -> str:
    return doc.text if isinstance(doc, TaggedDocument) else doc.body_text


def run_baseline_naive(docs: Sequence, request: str) -> EnrichedPrompt:
    """Every body, in gather order, pasted into the evidence slot."""
    if not docs:
        raise ValueError("naive baseline needs at least one document")
    blocks = tuple((d.url, _body(d)) for d in docs if _body(d).strip())
    return EnrichedPrompt(request, MergedText(blocks))


@dataclass(frozen=True)
class VectorParams:
    chunk_size: int = 512
    chunk_overlap: int = 128
    top_k: int = 12
    neighbor_num: int = 1

    def __post_init__(self):
        if self.chunk_size < 1 or self.top_k < 1 or self.neighbor_num < 0 or self.chunk_overlap < 0:
            raise ValueError("vector parameters must be positive")
        if self.chunk_overlap >= self.chunk_size:
            raise ValueError("overlap must be smaller than chunk size")

    @property
    def stride(self) -> int:
        return self.chunk_size - self.chunk_overlap


def chunk_starts(n_tokens: int, size: int = 512, overlap: int = 128) -> list[int]:
    """Token offsets of sliding windows; the last window reaches the end."""
    stride = size - overlap
    starts = [0]
    while starts[-1] + size < n_tokens:
        starts.append(starts[-1] + stride)
    return starts


@dataclass(frozen=True)
class Chunk:
    doc_index: int
    position: int  # chunk number within its document
    token_start: int
    token_end: int
    text: str


def chunk_document(text: str, doc_index: int, params: VectorParams, tokenizer: RegexTokenizer = DEFAULT_TOKENIZER) -> list[Chunk]:
    spans = tokenizer.spans(text)
    if not spans:
        return []
    out = []
    for pos, start in enumerate(chunk_starts(len(spans), params.chunk_size, params.chunk_overlap)):
        end = min(start + params.chunk_size, len(spans))
        out.append(Chunk(doc_index, pos, start, end, text[spans[start][0] : spans[end - 1][1]]))
    return out


def top_k_indices(query: np.ndarray, matrix: np.ndarray, k: int) -> list[int]:
    """Exhaustive cosine ranking of unit rows; equal scores keep index order."""
    if matrix.shape[0] == 0:
        return []
    scores = matrix @ query
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:k]]


def run_baseline_vector(
    docs: Sequence,
    request: str,
    embedder: EmbedBackend,
    params: VectorParams = VectorParams(),
    tokenizer: RegexTokenizer = DEFAULT_TOKENIZER,
) -> EnrichedPrompt:
    """Top-k chunks by cosine to the request, each widened by its neighbours."""
    if not docs:
        raise ValueError("vector baseline needs at least one document")
    bodies = [_body(d) for d in docs]
    chunks: list[Chunk] = []
    per_doc: dict[int, list[Chunk]] = {}
    for i, body in enumerate(bodies):
        cs = chunk_document(body, i, params, tokenizer)
        per_doc[i] = cs
        chunks.extend(cs)
    if not chunks:
        return EnrichedPrompt(request)
    matrix = np.stack([embed(embedder, c.text).values for c in chunks])
    query = embed(embedder, request).values
    emitted: set[tuple[int, int]] = set()
    blocks = []
    for idx in top_k_indices(query, matrix, params.top_k):
        c = chunks[idx]
        lo = max(0, c.position - params.neighbor_num)
        hi = min(len(per_doc[c.doc_index]) - 1, c.position + params.neighbor_num)
        run: list[Chunk] = []
        for pos in range(lo, hi + 1):
            if (c.doc_index, pos) in emitted:
                if run:
                    blocks.append(_merge_run(docs[c.doc_index].url, bodies[c.doc_index], run, tokenizer))
                    run = []
                continue
            emitted.add((c.doc_index, pos))
            run.append(per_doc[c.doc_index][pos])
        if run:
            blocks.append(_merge_run(docs[c.doc_index].url, bodies[c.doc_index], run, tokenizer))
    return EnrichedPrompt(request, MergedText(tuple(blocks)))


def _merge_run(url: str, body: str, run: list[Chunk], tokenizer: RegexTokenizer) -> tuple[str, str]:
    # contiguous chunks overlap, so emit their union span once
    spans = tokenizer.spans(body)
    start, end = run[0].token_start, max(c.token_end for c in run)
    return url, body[spans[start][0] : spans[end - 1][1]]
