import random
import time

import pytest

from zerodex.extractor import (
    EnrichedPrompt,
    ExtractionResult,
    MergedText,
    build_extractor_calls,
    build_extractor_prompt,
    extract_all,
    extract_document,
    merge,
    merge_and_assemble,
    parse_extractor_reply,
    render_evidence,
    windows,
)
from zerodex.gateway import CallableBackend, ScriptedBackend, SequenceBackend, TransportError, make_scripted_backend
from zerodex.mocks import read_extractor_prompt
from zerodex.reranker import RankedSelection, Selected
from zerodex.segmenter import TaggedDocument


def fig2_backend(desmann, huawei, lock_doc):
    return make_scripted_backend({
        build_extractor_prompt(desmann, lock_doc).user_text: "TAG-5,TAG-6,TAG-7",
        build_extractor_prompt(huawei, lock_doc).user_text: "None",
    })


def test_prompt_holds_request_and_every_tag(desmann, lock_doc):
    call = build_extractor_prompt(desmann, lock_doc)
    for i in range(1, 8):
        assert f"<TAG-{i}>" in call.user_text and f"</TAG-{i}>" in call.user_text
    assert desmann.text in call.user_text
    request, segs = read_extractor_prompt(call.user_text)
    assert request == desmann.text and [i for i, _ in segs] == list(range(1, 8))


def test_desmann_and_huawei(desmann, huawei, lock_doc):
    backend = fig2_backend(desmann, huawei, lock_doc)
    d = extract_document(backend, desmann, lock_doc)
    h = extract_document(backend, huawei, lock_doc)
    assert d.tags == (5, 6, 7) and not d.warnings
    assert h.tags is None and not h.warnings
    merged = merge([lock_doc], [d])
    assert merged.blocks[0][1].startswith("Desmann is a German brand")
    assert merged.blocks[0][1].endswith("five-year Desmann warranty.")


@pytest.mark.parametrize("reply, tags, warned", [
    ("TAG-2, TAG-99", (2,), True),
    ("tag-3,TAG-1,TAG-3", (1, 3), False),
    ("5 and 6", (5, 6), False),
    ("None", None, False),
    ("none.", None, False),
    ("  None  ", None, False),
    ("", None, True),
    ("I cannot decide", None, True),
    ("TAG-0", None, True),
])
def test_reply_parsing(lock_doc, reply, tags, warned):
    res = parse_extractor_reply(reply, lock_doc)
    assert res.tags == tags
    assert bool(res.warnings) == warned


def test_empty_tag_tuple_is_rejected():
    with pytest.raises(ValueError):
        ExtractionResult(0, ())


def test_windows_cover_every_segment_once(lock_doc):
    ws = windows(lock_doc, prompt_cap=150)
    assert len(ws) > 1
    assert [s.tag_id for w in ws for s in w] == list(lock_doc.tag_ids)
    assert windows(lock_doc)[0] == lock_doc.segments


def test_windowed_extraction_unions_tags(desmann, lock_doc):
    def first_of_window(call):
        _, segs = read_extractor_prompt(call.user_text)
        return f"TAG-{segs[0][0]}"

    backend = CallableBackend(first_of_window)
    ws = windows(lock_doc, prompt_cap=150)
    res = extract_document(backend, desmann, lock_doc, prompt_cap=150)
    assert res.tags == tuple(w[0].tag_id for w in ws)
    assert backend.call_count == len(ws) == len(build_extractor_calls(desmann, lock_doc, 150))


def test_cross_window_ids_are_dropped(desmann, lock_doc):
    # a window that answers with an id it did not show must not leak it in
    res = extract_document(CallableBackend(lambda c: "TAG-7"), desmann, lock_doc, prompt_cap=150)
    assert res.tags == (7,)
    assert any("unknown tag" in w for w in res.warnings)


def test_failures_degrade_to_none(desmann, lock_doc):
    res = extract_document(SequenceBackend([TransportError("x"), TransportError("y")]), desmann, lock_doc, retry_backoff=0)
    assert res.tags is None and "failed" in res.warnings[0]
    res = extract_document(ScriptedBackend({}), desmann, lock_doc)
    assert res.tags is None and res.warnings


def test_truncated_reply_still_parsed(desmann, lock_doc):
    long_reply = ",".join(f"TAG-{i % 7 + 1}" for i in range(200))
    res = extract_document(CallableBackend(lambda c: long_reply), desmann, lock_doc)
    assert res.tags and "extractor reply truncated" in res.warnings


def test_extract_all_keeps_selection_order(desmann):
    docs = [TaggedDocument.from_text(f"Doc number {i}. More text.", url=f"u{i}") for i in range(6)]
    delays = [0.05, 0.0, 0.03, 0.01, 0.04, 0.02]

    def slow(call):
        req, segs = read_extractor_prompt(call.user_text)
        n = int(segs[0][1].split()[2].rstrip("."))
        time.sleep(delays[n])
        return "TAG-1" if n % 2 else "None"

    sel = RankedSelection(tuple(Selected(i, 0.5, "full") for i in [4, 0, 5, 1, 3, 2]))
    results = extract_all(CallableBackend(slow), desmann, sel, docs, max_parallel=6)
    assert [r.doc_index for r in results] == [4, 0, 5, 1, 3, 2]
    assert [r.tags for r in results] == [None, None, (1,), (1,), (1,), None]


def test_extract_all_rejects_empty_selection(desmann):
    with pytest.raises(ValueError):
        extract_all(CallableBackend(lambda c: "None"), desmann, RankedSelection(()), [])


def test_merge_skips_none_and_formats_evidence(desmann, lock_doc):
    other = TaggedDocument.from_text("Other page. Second line.", url="https://other.example")
    docs = [lock_doc, other]
    results = [ExtractionResult(1, (2,)), ExtractionResult(0, None), ExtractionResult(0, (1, 2))]
    merged = merge(docs, results)
    assert [u for u, _ in merged.blocks] == ["https://other.example", lock_doc.url]
    ev = render_evidence(merged)
    assert ev.startswith("[Source 1] https://other.example\nSecond line.\n\n[Source 2] " + lock_doc.url)
    prompt = merge_and_assemble(desmann, docs, results)
    assert ev in prompt.user_text and desmann.text in prompt.user_text


def test_all_none_gives_bare_prompt(desmann, lock_doc):
    prompt = merge_and_assemble(desmann, [lock_doc], [ExtractionResult(0, None)])
    assert not prompt.merged
    assert prompt.user_text == desmann.text
    assert EnrichedPrompt("q", MergedText()).evidence == ""


def test_extraction_is_subset_of_document(desmann):
    rng = random.Random(5)
    for _ in range(50):
        doc = TaggedDocument.from_text(" ".join(f"Sentence {i} here." for i in range(rng.randint(1, 30))))
        pick = sorted(rng.sample(list(doc.tag_ids), rng.randint(1, doc.m)))

        def reply(call, pick=pick):
            shown = {i for i, _ in read_extractor_prompt(call.user_text)[1]}
            return ",".join(f"TAG-{i}" for i in pick if i in shown) or "None"

        res = extract_document(CallableBackend(reply), desmann, doc, prompt_cap=200)
        assert not res.warnings
        assert set(res.tags) == set(pick)
        assert len(merge([doc], [res]).blocks[0][1]) <= len(doc.text)
