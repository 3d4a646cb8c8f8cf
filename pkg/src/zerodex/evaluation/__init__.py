"""Benchmarks, metrics, judging and baseline systems."""

from .judge import EvalError, JudgeVerdict, Outcome, judge_pair
from .metrics import CorpusScore, TagSetScore, aggregate_scores, score_tags
from .synthetic import BenchmarkCase, HaystackTooSmall, NeedleSpec, generate_synthetic

__all__ = [
    "BenchmarkCase",
    "CorpusScore",
    "EvalError",
    "HaystackTooSmall",
    "JudgeVerdict",
    "NeedleSpec",
    "Outcome",
    "TagSetScore",
    "aggregate_scores",
    "generate_synthetic",
    "judge_pair",
    "score_tags",
]
