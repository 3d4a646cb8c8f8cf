import random

import pytest

from oracles import rerank_oracle
from zerodex.gateway import BackendError, HashEmbedder
from zerodex.request_parser import KeywordList, ParseOutcome, TimeAnnotation
from zerodex.reranker import FAILED_SCORE, RankCandidate, rerank, score_candidates, select_top_k
from zerodex.segmenter import TaggedDocument


def outcome(*words):
    return ParseOutcome(True, (KeywordList("en", words, "main"),), TimeAnnotation())


def doc(body, snippet="", source="main", rank=1):
    return TaggedDocument.from_text(body, url=f"https://x.example/{rank}", snippet=snippet, source=source, engine_rank=rank)


def test_best_of_either_granularity():
    cands = [
        RankCandidate(0, "snippet", 0.9), RankCandidate(0, "full", 0.1),
        RankCandidate(1, "snippet", 0.2), RankCandidate(1, "full", 0.8),
        RankCandidate(2, "snippet", 0.5), RankCandidate(2, "full", 0.5),
    ]
    sel = select_top_k(cands, 2)
    assert [(s.doc_index, s.granularity) for s in sel] == [(0, "snippet"), (1, "full")]
    assert select_top_k(cands, 3).items[2].granularity == "snippet"


def test_ties_prefer_main_then_engine_rank_then_index():
    cands = [
        RankCandidate(0, "snippet", 0.5, main=False, engine_rank=1),
        RankCandidate(1, "snippet", 0.5, main=True, engine_rank=3),
        RankCandidate(2, "snippet", 0.5, main=True, engine_rank=2),
        RankCandidate(3, "snippet", 0.5, main=True, engine_rank=2),
    ]
    assert select_top_k(cands, 4).doc_indices == [2, 3, 1, 0]


def test_k_larger_than_pool_and_bad_k():
    cands = [RankCandidate(0, "snippet", 0.1), RankCandidate(0, "full", 0.2)]
    assert select_top_k(cands, 10).doc_indices == [0]
    with pytest.raises(ValueError):
        select_top_k(cands, 0)


def test_candidates_double_the_pool_and_scores_are_cosines():
    docs = [doc("Desmann locks are German. They are sturdy.", "Desmann lock review", rank=1),
            doc("Bananas are yellow fruit.", "", rank=2)]
    cands = score_candidates(HashEmbedder(128), KeywordList("en", ("desmann", "lock")), docs, max_workers=1)
    assert len(cands) == 4
    assert {(c.doc_index, c.granularity) for c in cands} == {(0, "snippet"), (0, "full"), (1, "snippet"), (1, "full")}
    empty_snippet = next(c for c in cands if c.doc_index == 1 and c.granularity == "snippet")
    assert empty_snippet.score == FAILED_SCORE
    assert all(-1.0 <= c.score <= 1.0 + 1e-9 for c in cands)


def test_rerank_picks_relevant_document():
    docs = [doc("Bananas are yellow. Apples are red.", "fruit guide", rank=1),
            doc("The Desmann smart lock has face recognition.", "Desmann smart lock", rank=2)]
    trace = []
    sel = rerank(HashEmbedder(256), outcome("desmann", "smart", "lock"), docs, k=1, trace=trace)
    assert sel.doc_indices == [1]
    assert trace[-1]["event"] == "candidate_scores" and len(trace[-1]["candidates"]) == 4


class FlakyEmbedder(HashEmbedder):
    def embed_raw(self, text):
        if "poison" in text:
            raise BackendError("embedding service down", 500)
        return super().embed_raw(text)


def test_failed_embedding_never_wins():
    docs = [doc("poison text here.", "poison", rank=1), doc("lock text.", "lock", rank=2)]
    trace = []
    sel = rerank(FlakyEmbedder(64), outcome("lock"), docs, k=2, trace=trace, max_workers=1)
    assert sel.doc_indices == [1, 0]
    assert sel.items[1].best_score == FAILED_SCORE
    assert any(e["event"] == "embed_failed" for e in trace)


def test_rerank_requires_main_list():
    with pytest.raises(ValueError):
        rerank(HashEmbedder(), ParseOutcome.no_search(), [doc("x.")], 1)


def test_matches_oracle_on_random_pools():
    rng = random.Random(3)
    for _ in range(300):
        n = rng.randint(1, 20)
        cands = []
        for i in range(n):
            main, er = rng.random() < 0.7, rng.randint(1, 5)
            for g in ("snippet", "full"):
                # coarse scores force many ties
                cands.append(RankCandidate(i, g, rng.choice([0.1, 0.2, 0.3, 0.5, rng.random()]), main, er))
        k = rng.randint(1, 8)
        sel = select_top_k(cands, k)
        assert [(s.doc_index, s.best_score, s.granularity) for s in sel] == rerank_oracle(cands, k)
