import random

import numpy as np
import pytest

from oracles import chunk_count_formula, cosine_topk_oracle
from zerodex.evaluation.baselines import (
    VectorParams,
    chunk_document,
    chunk_starts,
    run_baseline_naive,
    run_baseline_vector,
    top_k_indices,
)
from zerodex.gateway import HashEmbedder
from zerodex.segmenter import TaggedDocument


def words(n, prefix="w"):
    return " ".join(f"{prefix}{i}" for i in range(n))


def test_default_parameters():
    p = VectorParams()
    assert (p.chunk_size, p.chunk_overlap, p.top_k, p.neighbor_num) == (512, 128, 12, 1)
    assert p.stride == 384
    with pytest.raises(ValueError):
        VectorParams(chunk_size=100, chunk_overlap=100)


@pytest.mark.parametrize("n", [1, 100, 511, 512, 513, 896, 897, 900, 1280, 1281, 5000])
def test_chunk_count_matches_formula(n):
    assert len(chunk_starts(n)) == chunk_count_formula(n)


def test_chunks_cover_every_token():
    for n in range(1, 3000, 37):
        starts = chunk_starts(n)
        assert starts[-1] + 512 >= n
        assert all(b - a == 384 for a, b in zip(starts, starts[1:]))


def test_chunk_document_spans_text():
    text = words(900)
    chunks = chunk_document(text, 0, VectorParams())
    assert [c.token_start for c in chunks] == [0, 384, 768]
    assert chunks[0].text.startswith("w0 ") and chunks[-1].text.endswith("w899")
    assert chunks[1].text.split()[0] == "w384"
    assert chunk_document("", 0, VectorParams()) == []


def test_topk_matches_exhaustive_sort():
    rng = np.random.default_rng(2)
    for _ in range(100):
        rows = rng.normal(size=(rng.integers(1, 40), 8))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        q = rng.normal(size=8)
        q /= np.linalg.norm(q)
        k = int(rng.integers(1, 15))
        assert top_k_indices(q, rows, k) == cosine_topk_oracle(q.tolist(), rows.tolist(), k)


def test_naive_concatenates_everything():
    docs = [TaggedDocument.from_text("One. Two.", url="u1"), TaggedDocument.from_text("Three.", url="u2")]
    p = run_baseline_naive(docs, "q")
    assert p.merged.blocks == (("u1", "One. Two."), ("u2", "Three."))
    with pytest.raises(ValueError):
        run_baseline_naive([], "q")


def test_vector_expands_neighbours_and_dedupes():
    # the best chunk and its neighbours come back merged into one span
    body = " ".join([words(400, "a"), words(400, "b"), "target phrase here", words(600, "c")])
    doc = TaggedDocument(url="u", segments=TaggedDocument.from_text(body).segments)
    params = VectorParams(top_k=1)
    p = run_baseline_vector([doc], "target phrase here", HashEmbedder(512), params)
    assert len(p.merged.blocks) == 1
    text = p.merged.blocks[0][1]
    assert "target phrase here" in text
    assert text in doc.text


def test_vector_merged_text_is_subset_of_bodies():
    rng = random.Random(4)
    for _ in range(10):
        docs = [TaggedDocument.from_text(words(rng.randint(50, 1500), f"d{i}x"), url=f"u{i}") for i in range(3)]
        p = run_baseline_vector(docs, "d1x5 d2x7", HashEmbedder(64), VectorParams(chunk_size=64, chunk_overlap=16, top_k=4))
        for url, text in p.merged.blocks:
            assert text in next(d.text for d in docs if d.url == url)
