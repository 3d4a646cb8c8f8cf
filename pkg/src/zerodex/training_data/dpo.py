"""Preference pairs for the extractor from judged end-to-end answers.

For a request and its documents, the reference extractor tags every
document and the generator answers from the merged evidence. Each round then
re-tags one randomly chosen document with an alternative extractor, answers
again, and lets a judge grade both answers separately. The tag set behind the
better answer becomes the preferred output for that document.
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..evaluation.judge import grade
from ..extractor import EnrichedPrompt, ExtractionResult, extract_document, merge
from ..gateway import BudgetError, ChatBackend, complete
from ..mocks import format_tags
from ..pipeline import PipelineConfig
from ..request_parser import InferenceRequest
from ..segmenter import TaggedDocument, render_window
from .. import templates

DEFAULT_ROUNDS = 2


@dataclass(frozen=True)
class PreferenceRecord:
    request: str
    doc: TaggedDocument
    doc_index: int
    y_plus: tuple[int, ...] | None
    y_minus: tuple[int, ...] | None
    score_plus: float
    score_minus: float
    round: int = 0
    request_id: str = ""

    def __post_init__(self):
        if self.y_plus == self.y_minus:
            raise ValueError("preferred and dispreferred tag sets must differ")
        valid = set(self.doc.tag_ids)
        for y in (self.y_plus, self.y_minus):
            if y is not None and (not y or any(t not in valid for t in y)):
                raise ValueError("tag set does not fit the document")

    def to_dict(self) -> dict:
        prompt = templates.render(templates.EXTRACTOR_VERSION, "user", request=self.request, tagged=render_window(self.doc.segments))
        return {
            "schema": "zerodex.preference/v1",
            "request_id": self.request_id,
            "round": self.round,
            "request": self.request,
            "url": self.doc.url,
            "doc_index": self.doc_index,
            "tagged_content": render_window(self.doc.segments),
            "y_plus": list(self.y_plus) if self.y_plus else None,
            "y_minus": list(self.y_minus) if self.y_minus else None,
            "scores": {"plus": self.score_plus, "minus": self.score_minus},
            "prompt": prompt,
            "chosen": format_tags(self.y_plus or ()),
            "rejected": format_tags(self.y_minus or ()),
        }


@dataclass
class DpoOutcome:
    request_id: str
    records: list[PreferenceRecord] = field(default_factory=list)
    discards: list[dict] = field(default_factory=list)
    traces: list[dict] = field(default_factory=list)


def _generate(backend: ChatBackend, prompt: EnrichedPrompt, config: PipelineConfig) -> str:
    call = prompt.to_call(config.generation_max_tokens, config.generation_temperature, config.generation_seed)
    try:
        return complete(backend, call, retry_backoff=config.retry_backoff).text
    except BudgetError as exc:
        return exc.partial_text


def _tags(results: Sequence[ExtractionResult]) -> list:
    return [list(r.tags) if r.tags else None for r in results]


def round_choices(n_docs: int, rounds: int, rng: random.Random) -> list[int]:
    """Document index per round; distinct across rounds while documents last."""
    order: list[int] = []
    while len(order) < rounds:
        order.extend(rng.sample(range(n_docs), n_docs))
    return order[:rounds]


def dpo_build(
    request: InferenceRequest,
    docs: Sequence[TaggedDocument],
    ref_extractor: ChatBackend,
    alt_extractor: ChatBackend,
    generator: ChatBackend,
    judge: ChatBackend,
    rounds: int = DEFAULT_ROUNDS,
    *,
    seed: int = 0,
    config: PipelineConfig = PipelineConfig(),
) -> DpoOutcome:
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if not docs:
        raise ValueError("need at least one document")
    out = DpoOutcome(request.id)
    cap = config.extract_prompt_cap

    ref = [extract_document(ref_extractor, request, d, i, prompt_cap=cap, retry_backoff=config.retry_backoff) for i, d in enumerate(docs)]
    response = _generate(generator, EnrichedPrompt(request.text, merge(docs, ref), config.generation_template), config)
    rng = random.Random(f"{seed}:{request.id}")

    for r, i in enumerate(round_choices(len(docs), rounds, rng)):
        trace = {"schema": "zerodex.dpo_trace/v1", "request_id": request.id, "round": r, "doc_index": i, "ref_tags": _tags(ref)}
        try:
            alt_i = extract_document(alt_extractor, request, docs[i], i, prompt_cap=cap, retry_backoff=config.retry_backoff)
            alt = list(ref)
            alt[i] = alt_i
            trace["alt_tags"] = _tags(alt)
            if alt_i.tags == ref[i].tags:
                out.discards.append({"request_id": request.id, "round": r, "doc_index": i, "reason": "identical tags"})
                out.traces.append(trace)
                continue
            response_alt = _generate(generator, EnrichedPrompt(request.text, merge(docs, alt), config.generation_template), config)
            score, judge_reply = grade(judge, request.text, response)
            score_alt, judge_reply_alt = grade(judge, request.text, response_alt)
            trace.update(
                response=response, response_alt=response_alt, scores=[score, score_alt], judge=[judge_reply, judge_reply_alt]
            )
            out.traces.append(trace)
            if score == score_alt:
                out.discards.append({"request_id": request.id, "round": r, "doc_index": i, "reason": "tied scores"})
                continue
            if score_alt > score:
                plus, minus, s_plus, s_minus = alt_i.tags, ref[i].tags, score_alt, score
            else:
                plus, minus, s_plus, s_minus = ref[i].tags, alt_i.tags, score, score_alt
            out.records.append(PreferenceRecord(request.text, docs[i], i, plus, minus, s_plus, s_minus, r, request.id))
        except Exception as exc:  # noqa: BLE001 - one bad round does not stop the others
            trace["error"] = f"{type(exc).__name__}: {exc}"
            out.traces.append(trace)
            out.discards.append({"request_id": request.id, "round": r, "doc_index": i, "reason": f"error: {exc}"})
    return out


def read_dpo_cases(path: str | Path) -> list[tuple[InferenceRequest, list[TaggedDocument]]]:
    """Lines of ``{"id", "request" or "text", "docs": [...]}``; benchmark case files also work."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh):
            if not line.strip():
                continue
            d = json.loads(line)
            req = InferenceRequest(str(d.get("id", n)), d.get("request") or d.get("text", ""))
            out.append((req, [TaggedDocument.from_dict(x) for x in d["docs"]]))
    return out


def prepare_dpo(
    cases: Iterable[tuple[InferenceRequest, Sequence[TaggedDocument]]],
    ref_extractor: ChatBackend,
    alt_extractor: ChatBackend,
    generator: ChatBackend,
    judge: ChatBackend,
    *,
    rounds: int = DEFAULT_ROUNDS,
    seed: int = 0,
    config: PipelineConfig = PipelineConfig(),
    max_parallel: int = 4,
    out_dir: str | Path | None = None,
) -> tuple[list[DpoOutcome], dict]:
    cases = list(cases)

    def run(case):
        req, docs = case
        return dpo_build(req, docs, ref_extractor, alt_extractor, generator, judge, rounds, seed=seed, config=config)

    with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
        outcomes = list(pool.map(run, cases))
    manifest = {
        "schema": "zerodex.dpo_manifest/v1",
        "seed": seed,
        "rounds": rounds,
        "requests": len(cases),
        "records": sum(len(o.records) for o in outcomes),
        "discards": sum(len(o.discards) for o in outcomes),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "preferences.jsonl", "w", encoding="utf-8") as fh:
            for o in outcomes:
                for rec in o.records:
                    fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
        with open(out / "traces.jsonl", "w", encoding="utf-8") as fh:
            for o in outcomes:
                for t in o.traces:
                    fh.write(json.dumps(t, ensure_ascii=False) + "\n")
        with open(out / "discards.jsonl", "w", encoding="utf-8") as fh:
            for o in outcomes:
                for d in o.discards:
                    fh.write(json.dumps(d, ensure_ascii=False) + "\n")
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return outcomes, manifest
