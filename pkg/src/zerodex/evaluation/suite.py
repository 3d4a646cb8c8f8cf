"""Batch evaluation: extractor metrics and judged comparisons against baselines."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..extractor import EnrichedPrompt, ExtractionResult, extract_document, merge
from ..gateway import BudgetError, CallableBackend, ChatBackend, ChatCall, complete
from ..mocks import format_tags, read_extractor_prompt
from ..pipeline import Backends, PipelineConfig, count_prompt_tokens
from ..request_parser import InferenceRequest
from .baselines import VectorParams, run_baseline_naive, run_baseline_vector
from .judge import Outcome, judge_pair
from .metrics import CorpusScore, aggregate_counts, score_tags, tag_counts
from .synthetic import BenchmarkCase

SYSTEMS = ("ext", "naive", "vector")
RESULT_SCHEMA = "zerodex.result/v1"


def gold_oracle_extractor(cases: Sequence[BenchmarkCase]) -> CallableBackend:
    """An extractor that answers with the gold tags of whichever case document it is shown."""
    index: dict[tuple[str, int, str], list[tuple]] = {}
    for case in cases:
        for doc, gold in zip(case.docs, case.gold):
            for seg in doc.segments:
                index.setdefault((case.request, seg.tag_id, seg.text), []).append((doc, gold))

    def reply(call: ChatCall) -> str:
        request, window = read_extractor_prompt(call.user_text)
        if not window:
            return "None"
        first_id, first_text = window[0]
        for doc, gold in index.get((request, first_id, first_text), []):
            if all(t <= doc.m and doc.segments[t - 1].text == s for t, s in window):
                ids = {t for t, _ in window}
                return format_tags(set(gold or ()) & ids)
        return "None"

    return CallableBackend(reply)


def extract_case(backend: ChatBackend, case: BenchmarkCase, config: PipelineConfig = PipelineConfig()) -> list[ExtractionResult]:
    request = InferenceRequest(case.id, case.request)
    return [
        extract_document(backend, request, doc, i, prompt_cap=config.extract_prompt_cap, retry_backoff=config.retry_backoff)
        for i, doc in enumerate(case.docs)
    ]


@dataclass
class ExtractorReport:
    rows: list[dict]
    aggregate: CorpusScore
    by_category: dict[str, CorpusScore]

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate.to_dict(),
            "by_category": {k: v.to_dict() for k, v in sorted(self.by_category.items())},
        }


def evaluate_extractor(
    backend: ChatBackend,
    cases: Sequence[BenchmarkCase],
    config: PipelineConfig = PipelineConfig(),
    max_parallel: int = 4,
) -> ExtractorReport:
    """Score every (case, document) prediction against gold; micro-averaged."""
    if not cases:
        raise ValueError("no cases")

    def run(case: BenchmarkCase) -> dict:
        results = extract_case(backend, case, config)
        preds = [r.tags for r in results]
        return {
            "case_id": case.id,
            "category": case.category,
            "pred": [list(p) if p else None for p in preds],
            "gold": [list(g) if g else None for g in case.gold],
            "scores": [score_tags(p, g).to_dict() for p, g in zip(preds, case.gold)],
            "counts": [tag_counts(p, g) for p, g in zip(preds, case.gold)],
        }

    with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
        rows = list(pool.map(run, cases))
    by_cat: dict[str, list] = {}
    for row in rows:
        by_cat.setdefault(row["category"], []).extend(row["counts"])
    aggregate = aggregate_counts(c for row in rows for c in row["counts"])
    for row in rows:
        row.pop("counts")
    return ExtractorReport(rows, aggregate, {k: aggregate_counts(v) for k, v in by_cat.items()})


def _generate(backend: ChatBackend, prompt: EnrichedPrompt, config: PipelineConfig) -> str:
    call = prompt.to_call(config.generation_max_tokens, config.generation_temperature, config.generation_seed)
    try:
        return complete(backend, call, retry_backoff=config.retry_backoff).text
    except BudgetError as exc:
        return exc.partial_text


@dataclass
class SuiteResult:
    system: str
    rows: list[dict]
    counts: dict[str, int]
    metrics: CorpusScore | None
    tokens: dict[str, int] = field(default_factory=dict)

    @property
    def judged(self) -> int:
        return sum(self.counts[o.value] for o in Outcome)

    def summary(self) -> dict:
        out = {
            "schema": "zerodex.summary/v1",
            "system": self.system,
            "cases": len(self.rows),
            "errors": sum(1 for r in self.rows if r.get("error")),
            "verdicts": self.counts,
            "tokens": self.tokens,
            "metrics": self.metrics.to_dict() if self.metrics else None,
        }
        if self.tokens.get("baseline"):
            out["token_reduction"] = 1.0 - self.tokens["ext"] / self.tokens["baseline"]
        return out

    def table(self) -> str:
        head = "| system | WIN | TIE | LOSE | PBIA |\n|---|---|---|---|---|\n"
        c = self.counts
        return head + f"| ext vs {self.system} | {c['WIN']} | {c['TIE']} | {c['LOSE']} | {c['PBIA']} |\n"


def run_suite(
    system: str,
    cases: Sequence[BenchmarkCase],
    backends: Backends,
    config: PipelineConfig = PipelineConfig(),
    *,
    out_dir: str | Path | None = None,
    max_parallel: int = 4,
    vector_params: VectorParams = VectorParams(),
) -> SuiteResult:
    """Run the extraction system on every case and, for a baseline, judge the pair.

    ``ext`` only scores extraction against gold. ``naive`` and ``vector``
    generate an answer from both prompts and judge them with swapped order;
    verdicts are from the extraction system's point of view. A failing case is
    recorded with its error and the suite moves on.
    """
    if system not in SYSTEMS:
        raise ValueError(f"system must be one of {SYSTEMS}")
    if system != "ext" and backends.judge is None:
        raise ValueError("a judge backend is required for baseline comparisons")
    tok = backends.tokenizer

    def run(case: BenchmarkCase) -> dict:
        row: dict = {"schema": RESULT_SCHEMA, "case_id": case.id, "system": system, "category": case.category}
        try:
            results = extract_case(backends.extractor, case, config)
            preds = [r.tags for r in results]
            row["pred"] = [list(p) if p else None for p in preds]
            row["gold"] = [list(g) if g else None for g in case.gold]
            row["_counts"] = [tag_counts(p, g) for p, g in zip(preds, case.gold)]
            ext_prompt = EnrichedPrompt(case.request, merge(case.docs, results), config.generation_template)
            row["tokens"] = {"ext": count_prompt_tokens(ext_prompt, tok)}
            if system == "ext":
                return row
            if system == "naive":
                base_prompt = run_baseline_naive(case.docs, case.request)
            else:
                base_prompt = run_baseline_vector(case.docs, case.request, backends.embedder, vector_params, tok)
            base_prompt = EnrichedPrompt(base_prompt.request_text, base_prompt.merged, config.generation_template)
            row["tokens"]["baseline"] = count_prompt_tokens(base_prompt, tok)
            ext_answer = _generate(backends.generator, ext_prompt, config)
            base_answer = _generate(backends.generator, base_prompt, config)
            verdict = judge_pair(backends.judge, case.request, ext_answer, base_answer)
            row["verdict"] = verdict.to_dict()
        except Exception as exc:  # noqa: BLE001 - recorded, suite continues
            row["error"] = f"{type(exc).__name__}: {exc}"
        return row

    with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
        rows = list(pool.map(run, cases))

    counts = {o.value: 0 for o in Outcome}
    all_counts = []
    tokens = {"ext": 0, "baseline": 0}
    for row in rows:
        all_counts.extend(row.pop("_counts", []))
        if "verdict" in row:
            counts[row["verdict"]["outcome"]] += 1
        for k, v in row.get("tokens", {}).items():
            tokens[k] += v
    if system == "ext":
        tokens.pop("baseline")
    metrics = aggregate_counts(all_counts) if all_counts else None
    result = SuiteResult(system, rows, counts, metrics, tokens)
    if out_dir is not None:
        write_suite(result, out_dir)
    return result


def write_suite(result: SuiteResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for row in result.rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "summary.md").write_text(result.table(), encoding="utf-8")
