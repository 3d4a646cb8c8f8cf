"""Converters from public QA datasets to tagged benchmark cases.

Each sentence of a source paragraph becomes one tagged segment, so the
dataset's sentence-level supporting facts map directly onto gold tag ids.

Accepted input shapes (JSON array files or JSONL, one record each):

``multihop``
    The 2WikiMultihopQA layout: ``{"_id", "question", "context": [[title,
    [sentence, ...]], ...], "supporting_facts": [[title, sentence_index], ...]}``.

``multiple``
    One question with several documents and the answer-bearing sentences:
    ``{"id", "question", "documents": [{"title", "sentences": [...]}, ...],
    "answers": [[doc_index, sentence_index], ...]}``. Fine-grained answers are
    expected to have been prepared beforehand; their provenance is the
    operator's responsibility.

``mti``
    Single-question items ``{"id", "question", "paragraphs": [[sentence, ...],
    ...], "answers": [[paragraph_index, sentence_index], ...]}``. Consecutive
    groups of ``group`` items are combined into one multi-question case.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from ..segmenter import Segment, TaggedDocument, normalize
from .synthetic import BenchmarkCase

FORMATS = ("multihop", "multiple", "mti")


def _tag_sentences(sentences: Sequence[str], **meta) -> tuple[TaggedDocument, dict[int, int]]:
    """Tag non-blank sentences; returns the document and source index -> tag id."""
    segs: list[Segment] = []
    mapping: dict[int, int] = {}
    for i, s in enumerate(sentences):
        s = normalize(s)
        if not s:
            continue
        segs.append(Segment(len(segs) + 1, s, " " if segs else ""))
        mapping[i] = len(segs)
    return TaggedDocument(segments=tuple(segs), **meta), mapping


def _gold(mapping: dict[int, int], indices: Iterable[int]):
    tags = sorted({mapping[i] for i in indices if i in mapping})
    return tuple(tags) or None


def convert_multihop(record: dict) -> BenchmarkCase:
    docs, gold = [], []
    facts: dict[str, list[int]] = {}
    for title, idx in record.get("supporting_facts", []):
        facts.setdefault(title, []).append(int(idx))
    for title, sentences in record["context"]:
        doc, mapping = _tag_sentences(sentences, url=f"wiki://{title}", snippet=title)
        if not doc.segments:
            continue
        docs.append(doc)
        gold.append(_gold(mapping, facts.get(title, [])))
    return BenchmarkCase(str(record.get("_id", record.get("id"))), record["question"], docs, gold, "reasoning", {"source": "multihop"})


def _convert_documents(cid: str, request: str, documents: list, answers: list, category: str, source: str) -> BenchmarkCase:
    wanted: dict[int, list[int]] = {}
    for d, s in answers:
        wanted.setdefault(int(d), []).append(int(s))
    docs, gold = [], []
    for i, d in enumerate(documents):
        sentences = d["sentences"] if isinstance(d, dict) else d
        title = d.get("title", f"doc-{i}") if isinstance(d, dict) else f"doc-{i}"
        doc, mapping = _tag_sentences(sentences, url=f"{source}://{cid}/{title}", snippet=title)
        if not doc.segments:
            continue
        docs.append(doc)
        gold.append(_gold(mapping, wanted.get(i, [])))
    return BenchmarkCase(cid, request, docs, gold, category, {"source": source})


def convert_multiple(record: dict) -> BenchmarkCase:
    return _convert_documents(str(record["id"]), record["question"], record["documents"], record.get("answers", []), "multi-answer", "multiple")


def convert_mti(records: Sequence[dict], group: int = 3) -> list[BenchmarkCase]:
    if group < 1:
        raise ValueError("group must be >= 1")
    cases = []
    for start in range(0, len(records), group):
        chunk = records[start : start + group]
        documents, answers = [], []
        for rec in chunk:
            base = len(documents)
            documents.extend(rec["paragraphs"])
            answers.extend((base + int(p), int(s)) for p, s in rec.get("answers", []))
        cid = "+".join(str(r["id"]) for r in chunk)
        request = " ".join(r["question"] for r in chunk)
        category = "multi-question" if len(chunk) > 1 else "base"
        cases.append(_convert_documents(cid, request, documents, answers, category, "mti"))
    return cases


def read_records(path: str | Path) -> Iterator[dict]:
    """Records from a JSON array file, a JSONL file, or every such file in a directory."""
    path = Path(path)
    files = sorted(p for p in path.iterdir() if p.suffix in (".json", ".jsonl")) if path.is_dir() else [path]
    for f in files:
        text = f.read_text(encoding="utf-8")
        if text.lstrip().startswith("["):
            yield from json.loads(text)
        else:
            for line in text.splitlines():
                if line.strip():
                    yield json.loads(line)


def convert(fmt: str, records: Iterable[dict], group: int = 3) -> list[BenchmarkCase]:
    if fmt == "multihop":
        return [convert_multihop(r) for r in records]
    if fmt == "multiple":
        return [convert_multiple(r) for r in records]
    if fmt == "mti":
        return convert_mti(list(records), group)
    raise ValueError(f"format must be one of {FORMATS}")
