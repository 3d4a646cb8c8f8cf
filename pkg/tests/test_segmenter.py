import pytest
from hypothesis import given, settings, strategies as st

from oracles import segment_oracle
from zerodex.segmenter import (
    Segment,
    TagFormatError,
    TaggedDocument,
    UnknownTagError,
    normalize,
    parse_tagged,
    render_tagged,
    resolve_tags,
    segment,
    strip_tags,
)

# alphabet that exercises every branch of the state machine
ALPHABET = "ab Z9 0.,!?。！？\"')”」）\n\t中文字"
texts = st.text(alphabet=ALPHABET, max_size=120)


def texts_of(text):
    return [s.text for s in segment(text)]


def test_lock_guide_has_seven_segments(lock_doc):
    assert lock_doc.m == 7
    assert lock_doc.segments[3].text == "Its battery lasts about 8.5 months under daily use."
    assert lock_doc.segments[4].text.startswith("Desmann is a German brand")


def test_delimiter_run_and_closers_stay_together():
    assert texts_of('He said "Stop!?" Then left.') == ['He said "Stop!?"', "Then left."]
    assert texts_of("Wait... what?") == ["Wait...", "what?"]


def test_cjk_sentences_split_without_spaces():
    segs = segment("今天天气很好。我们去公园吧！好的？")
    assert [s.text for s in segs] == ["今天天气很好。", "我们去公园吧！", "好的？"]
    assert [s.gap for s in segs] == ["", "", ""]


def test_decimals_are_not_boundaries():
    assert texts_of("Pi is 3.14 roughly. Next.") == ["Pi is 3.14 roughly.", "Next."]
    assert texts_of("Version 2. 5 apples.") == ["Version 2.", "5 apples."]


def test_trailing_text_without_delimiter_is_a_segment():
    assert texts_of("First. trailing words") == ["First.", "trailing words"]


def test_empty_and_whitespace_bodies():
    assert segment("") == []
    assert segment(" \n\t ") == []


def test_long_runs_are_force_split_at_spaces():
    text = " ".join(["word"] * 1000)
    segs = segment(text, max_segment_chars=50)
    assert all(len(s.text) <= 50 for s in segs)
    assert " ".join(s.text for s in segs) == text


def test_hard_cut_without_spaces_never_ends_on_decimal_point():
    text = "1" * 49 + ".5" + "x" * 30
    segs = segment(text, max_segment_chars=50)
    assert all(not s.text.endswith(".") for s in segs)
    assert "".join(s.text for s in segs) == text


def test_rejects_bad_cap():
    with pytest.raises(ValueError):
        segment("x", 0)


def test_matches_regex_oracle_on_samples():
    samples = [
        "A. B! C? D",
        "x 3.5 y. z",
        "他说：“好。”然后走了。",
        "Quote (end.) Next one.",
        "...leading dots. yes",
        "1.2.3 version numbers. ok",
    ]
    for s in samples:
        assert texts_of(s) == segment_oracle(s), s


@settings(max_examples=500, deadline=None)
@given(texts)
def test_segmenter_agrees_with_oracle(text):
    assert texts_of(text) == segment_oracle(text)


@settings(max_examples=500, deadline=None)
@given(texts)
def test_lossless_render_strip(text):
    doc = TaggedDocument(segments=tuple(segment(text)))
    assert strip_tags(render_tagged(doc)) == normalize(text)
    assert doc.text == normalize(text)


@settings(max_examples=300, deadline=None)
@given(texts)
def test_parse_inverts_render(text):
    doc = TaggedDocument(segments=tuple(segment(text)))
    assert parse_tagged(render_tagged(doc)) == doc


@settings(max_examples=300, deadline=None)
@given(texts, st.integers(min_value=1, max_value=40))
def test_no_decimal_point_ends_a_segment(text, cap):
    norm = normalize(text)
    pos = 0
    for seg in segment(text, cap):
        pos = norm.index(seg.text, pos)
        end = pos + len(seg.text)
        assert len(seg.text) <= cap
        if seg.text.endswith(".") and end < len(norm):
            assert not (end >= 2 and norm[end - 2].isdigit() and norm[end].isdigit())
        pos = end


def test_render_format(lock_doc):
    rendered = render_tagged(lock_doc)
    lines = rendered.split("\n")
    assert len(lines) == 7
    assert lines[0].startswith("<TAG-1>Smart door locks") and lines[0].endswith("</TAG-1>")
    assert lines[6].startswith("<TAG-7>")


def test_resolve_tags(lock_doc):
    assert resolve_tags(lock_doc, lock_doc.tag_ids) == lock_doc.text
    assert resolve_tags(lock_doc, [7, 5, 6, 5]) == " ".join(s.text for s in lock_doc.segments[4:7])
    assert resolve_tags(lock_doc, [1, 3]) == lock_doc.segments[0].text + " " + lock_doc.segments[2].text
    with pytest.raises(UnknownTagError):
        resolve_tags(lock_doc, [8])
    with pytest.raises(UnknownTagError):
        resolve_tags(lock_doc, [0])


def test_parse_rejects_malformed():
    for bad in ["<TAG-2>x</TAG-2>", "<TAG-1>x", "junk", "<TAG-1>x</TAG-1>\n\n<TAG-2>y</TAG-2>"]:
        with pytest.raises(TagFormatError):
            parse_tagged(bad)


def test_document_validation():
    with pytest.raises(ValueError):
        TaggedDocument(segments=(Segment(2, "x"),))
    with pytest.raises(ValueError):
        TaggedDocument(segments=(Segment(1, "x", " "),))
    with pytest.raises(ValueError):
        Segment(1, "  ")


def test_dict_round_trip(lock_doc):
    d = lock_doc.to_dict()
    assert TaggedDocument.from_dict(d) == lock_doc
    assert TaggedDocument.from_dict({"url": lock_doc.url, "snippet": lock_doc.snippet, "tagged": render_tagged(lock_doc)}) == lock_doc
    assert TaggedDocument.from_dict({"body_text": "One. Two."}).m == 2


def test_from_sentences():
    doc = TaggedDocument.from_sentences(["First one.", "  ", "Second\none."])
    assert [s.text for s in doc.segments] == ["First one.", "Second one."]
