"""Tag-set metrics: per-case precision/recall/F1/exact match and micro aggregates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

TagSet = Optional[frozenset]


def as_tagset(tags) -> TagSet:
    """Normalize an iterable of ids to a frozenset; empty and None both mean None."""
    if tags is None:
        return None
    s = frozenset(int(t) for t in tags)
    return s or None


def harmonic_f1(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class TagSetScore:
    precision: float
    recall: float
    f1: float
    exact_match: bool

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1, "exact_match": self.exact_match}


@dataclass(frozen=True)
class TagCounts:
    """Confusion counts for one case; a None/None agreement counts as one matched unit."""

    tp: int
    n_pred: int
    n_gold: int
    exact: bool


def tag_counts(pred, gold) -> TagCounts:
    p, g = as_tagset(pred), as_tagset(gold)
    if p is None and g is None:
        return TagCounts(1, 1, 1, True)
    p = p or frozenset()
    g = g or frozenset()
    return TagCounts(len(p & g), len(p), len(g), p == g)


def score_tags(pred, gold) -> TagSetScore:
    c = tag_counts(pred, gold)
    precision = c.tp / c.n_pred if c.n_pred else 0.0
    recall = c.tp / c.n_gold if c.n_gold else 0.0
    return TagSetScore(precision, recall, harmonic_f1(precision, recall), c.exact)


@dataclass(frozen=True)
class CorpusScore:
    precision: float
    recall: float
    f1: float
    em_ratio: float
    cases: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "em_ratio": self.em_ratio,
            "cases": self.cases,
        }


def aggregate_counts(counts: Iterable[TagCounts]) -> CorpusScore:
    counts = list(counts)
    if not counts:
        raise ValueError("need at least one scored case")
    tp = sum(c.tp for c in counts)
    n_pred = sum(c.n_pred for c in counts)
    n_gold = sum(c.n_gold for c in counts)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    em = sum(1 for c in counts if c.exact) / len(counts)
    return CorpusScore(precision, recall, harmonic_f1(precision, recall), em, len(counts))


def aggregate_scores(pairs: Iterable[tuple]) -> CorpusScore:
    """Micro-average over ``(pred, gold)`` pairs: P and R from summed counts, F1 from those."""
    return aggregate_counts(tag_counts(p, g) for p, g in pairs)
