import json
import random
from types import SimpleNamespace

import pytest

from oracles import best_two_class, max_none_kept, max_other_kept
from planted import planted_annotator, planted_log
from zerodex.gateway import SequenceBackend, TransportError
from zerodex.segmenter import TaggedDocument
from zerodex.training_data.instructions import (
    AnnotationFormatError,
    InfeasibleError,
    InstructionA,
    RawPair,
    annotate,
    derive_instruction_b,
    enforce_none_ratio,
    filter_short,
    none_ratio,
    parse_annotation,
    prepare_instructions,
    sample_raw,
)

DOC = TaggedDocument.from_text("Alpha one. Beta two. Gamma three.")
PAIR = RawPair("p", "q", DOC)


def rec(is_none):
    return SimpleNamespace(is_none=is_none)


def test_sampling_is_seeded_and_bounded():
    log = planted_log(10)
    a = sample_raw(log, per_request=2, seed=3)
    assert a == sample_raw(log, per_request=2, seed=3)
    assert len(a) == 20
    assert len({p.id for p in a}) == 20
    assert [p.id for p in a] != [p.id for p in sample_raw(log, per_request=2, seed=4)]
    with pytest.raises(ValueError):
        sample_raw(log, per_request=0)


def test_filter_short_boundary():
    docs = [TaggedDocument.from_text(" ".join(["w"] * n) + ".") for n in (98, 99, 100)]
    pairs = [RawPair(str(i), "q", d) for i, d in enumerate(docs)]
    assert [p.tokens for p in pairs] == [99, 100, 101]
    kept, removed = filter_short(pairs, 100)
    assert [p.id for p in kept] == ["1", "2"] and removed == 1


def test_parse_annotation():
    reply = '{"relevant": [{"summary": "s", "tags": ["TAG-2", "1", "TAG-2"]}]}'
    assert parse_annotation(reply, DOC) == (("s", (1, 2)),)
    assert parse_annotation("None", DOC) == ()
    assert parse_annotation('{"relevant": []}', DOC) == ()
    assert parse_annotation('```json\n{"relevant": []}\n```', DOC) == ()
    for bad in ["nope", "[]", '{"relevant": [{"tags": ["TAG-9"]}]}', '{"relevant": [{"tags": "TAG-1"}]}']:
        with pytest.raises(AnnotationFormatError):
            parse_annotation(bad, DOC)


def test_annotate_outcomes():
    ok = '{"relevant": [{"summary": "a", "tags": ["TAG-1"]}]}'
    regrouped = '{"relevant": [{"summary": "b", "tags": ["TAG-1"]}]}'
    assert isinstance(annotate(SequenceBackend([ok, regrouped]), PAIR), InstructionA)
    assert annotate(SequenceBackend(["None", "None"]), PAIR).is_none
    assert annotate(SequenceBackend([ok, "None"]), PAIR).reason == "inconsistent"
    assert annotate(SequenceBackend([ok, "junk"]), PAIR).reason.startswith("malformed")
    assert annotate(SequenceBackend([TransportError("a"), TransportError("b")]), PAIR).reason.startswith("transport")
    backend = SequenceBackend([ok, ok])
    annotate(backend, PAIR, seeds=(5, 6))
    assert [c.seed for c in backend.calls] == [5, 6]
    with pytest.raises(ValueError):
        annotate(backend, PAIR, seeds=(1, 1))


def test_instruction_b_drops_summaries():
    a = InstructionA("x", "q", DOC, (("first", (1,)), ("second", (2, 3))))
    b = derive_instruction_b(a)
    assert b.response() == "TAG-1,TAG-2,TAG-3"
    assert json.loads(a.response())["relevant"][1] == {"summary": "second", "tags": ["TAG-2", "TAG-3"]}
    assert "summary" not in json.dumps(b.to_dict())
    assert derive_instruction_b(InstructionA("n", "q", DOC, ())).response() == "None"


@pytest.mark.parametrize("n_none, n_other", [(50, 50), (200, 1000), (1, 300), (30, 20), (5, 95), (3, 100), (40, 400)])
def test_none_ratio_downsampling_matches_oracle(n_none, n_other):
    records = [rec(True)] * n_none + [rec(False)] * n_other
    random.Random(0).shuffle(records)
    out = enforce_none_ratio(records, 0.05, 0.005, seed=1)
    kept_none = sum(r.is_none for r in out)
    kept = (kept_none, len(out) - kept_none)
    if n_none / (n_none + n_other) > 0.055:
        single = (max_none_kept(n_none, n_other, 0.05), n_other)
    elif n_none / (n_none + n_other) < 0.045:
        single = (n_none, max_other_kept(n_none, n_other, 0.05))
    else:
        single = (n_none, n_other)
    if abs(single[0] / sum(single) - 0.05) <= 0.005:
        assert kept == single
    else:
        assert kept == best_two_class(n_none, n_other, 0.05, 0.005)
    assert abs(none_ratio(out) - 0.05) <= 0.005


def test_none_ratio_infeasible():
    with pytest.raises(InfeasibleError):
        enforce_none_ratio([rec(False)] * 10, 0.05)
    with pytest.raises(InfeasibleError):
        enforce_none_ratio([rec(True)] * 3 + [rec(False)] * 10, 0.05, 0.0001)


def test_prepare_on_planted_corpus(tmp_path):
    run = prepare_instructions(planted_log(60), planted_annotator(), per_request=4, out_dir=tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["counts"]["filtered_short"] == 60
    assert m["counts"]["rejected"] == 60
    assert m["none_ratio_before"] == 0.5
    assert abs(m["none_ratio"] - 0.05) <= 0.005
    rows = [json.loads(line) for line in (tmp_path / "instruction_a.jsonl").read_text().splitlines()]
    assert len(rows) == len(run.instructions_a) == m["counts"]["instruction_a"]
    assert all("Flipwort" not in r["tagged_content"] for r in rows)
    assert len((tmp_path / "instruction_b.jsonl").read_text().splitlines()) == len(rows)
    rejected = [json.loads(line) for line in (tmp_path / "rejected.jsonl").read_text().splitlines()]
    assert {r["reason"] for r in rejected} == {"inconsistent"}
