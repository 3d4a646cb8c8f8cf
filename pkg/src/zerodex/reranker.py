"""Mixed-granularity reranking of fetched documents.

Each document contributes two candidates, its search snippet and its full
body, scored independently against the keyword query. A document's rank is
decided by the better of its two scores, so engine position plays no part
beyond breaking exact ties.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Sequence

from .gateway import EmbedBackend, embed
from .request_parser import KeywordList, ParseOutcome
from .segmenter import TaggedDocument

DEFAULT_K = 6
EMBED_INPUT_CAP = 8000
FAILED_SCORE = -1.0

Granularity = Literal["snippet", "full"]


@dataclass(frozen=True)
class RankCandidate:
    doc_index: int
    granularity: Granularity
    score: float
    main: bool = True
    engine_rank: int = 1

    def to_dict(self) -> dict:
        return {"doc_index": self.doc_index, "granularity": self.granularity, "score": self.score}


@dataclass(frozen=True)
class Selected:
    doc_index: int
    best_score: float
    granularity: Granularity

    def to_dict(self) -> dict:
        return {"doc_index": self.doc_index, "best_score": self.best_score, "granularity": self.granularity}


@dataclass(frozen=True)
class RankedSelection:
    items: tuple[Selected, ...]
    candidates: tuple[RankCandidate, ...] = ()

    def __iter__(self):
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def doc_indices(self) -> list[int]:
        return [s.doc_index for s in self.items]

    def to_dict(self) -> dict:
        return {
            "schema": "zerodex.selection/v1",
            "selected": [s.to_dict() for s in self.items],
            "candidates": [c.to_dict() for c in self.candidates],
        }


def query_text(keywords: KeywordList) -> str:
    return " ".join(keywords.keywords)


def score_candidates(
    embedder: EmbedBackend,
    keywords: KeywordList,
    docs: Sequence[TaggedDocument],
    *,
    input_cap: int = EMBED_INPUT_CAP,
    max_workers: int = 4,
    trace: list | None = None,
) -> list[RankCandidate]:
    if not docs:
        raise ValueError("no documents to score")
    query = embed(embedder, query_text(keywords))

    jobs: list[tuple[int, Granularity, str]] = []
    for i, doc in enumerate(docs):
        jobs.append((i, "snippet", doc.snippet))
        jobs.append((i, "full", doc.text[:input_cap]))

    def score(job) -> float:
        i, gran, text = job
        if not text.strip():
            return FAILED_SCORE
        try:
            return query.cosine(embed(embedder, text))
        except Exception as exc:  # noqa: BLE001 - a failed candidate just never wins
            if trace is not None:
                trace.append({"event": "embed_failed", "doc_index": i, "granularity": gran, "error": str(exc)})
            return FAILED_SCORE

    if max_workers > 1 and len(jobs) > 2:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            scores = list(pool.map(score, jobs))
    else:
        scores = [score(j) for j in jobs]

    return [
        RankCandidate(i, gran, s, docs[i].source == "main", docs[i].engine_rank)
        for (i, gran, _), s in zip(jobs, scores)
    ]


def _tie_key(score: float, main: bool, engine_rank: int, doc_index: int):
    return (-score, 0 if main else 1, engine_rank, doc_index)


def select_top_k(candidates: Sequence[RankCandidate], k: int = DEFAULT_K) -> RankedSelection:
    """Best-of-either score per document, top ``k`` distinct documents.

    Ties order main-list documents before auxiliary ones, then lower engine
    rank, then lower pool index. Within a document an equal full-content score
    does not displace the snippet.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    best: dict[int, RankCandidate] = {}
    for c in candidates:
        cur = best.get(c.doc_index)
        if cur is None or c.score > cur.score or (c.score == cur.score and c.granularity == "snippet"):
            best[c.doc_index] = c
    ranked = sorted(best.values(), key=lambda c: _tie_key(c.score, c.main, c.engine_rank, c.doc_index))
    items = tuple(Selected(c.doc_index, c.score, c.granularity) for c in ranked[:k])
    return RankedSelection(items, tuple(candidates))


def rerank(
    embedder: EmbedBackend,
    outcome: ParseOutcome,
    docs: Sequence[TaggedDocument],
    k: int = DEFAULT_K,
    *,
    input_cap: int = EMBED_INPUT_CAP,
    max_workers: int = 4,
    trace: list | None = None,
) -> RankedSelection:
    if outcome.main is None:
        raise ValueError("rerank needs a main keyword list")
    candidates = score_candidates(embedder, outcome.main, docs, input_cap=input_cap, max_workers=max_workers, trace=trace)
    selection = select_top_k(candidates, k)
    if trace is not None:
        trace.append({"event": "candidate_scores", "candidates": [c.to_dict() for c in candidates]})
    return selection
