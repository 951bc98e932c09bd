from pathlib import Path

import numpy as np
import pytest

from backend.app.discovery.embedstore import save_matrix
from backend.app.discovery.models import EmbeddingMatrix
from backend.app.discovery.retrieval import (
    batch_query,
    build_index,
    load_corpus,
    load_index,
    query_topk,
    save_index,
    search,
    write_captions,
)
from backend.app.error_handlers import GcdError


def _corpus(rows: int, dims: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    matrix = EmbeddingMatrix(data=rng.standard_normal((rows, dims)), ids=[f"cap-{i}" for i in range(rows)])
    return build_index([f"caption {i}" for i in range(rows)], matrix)


def _exhaustive(index, query, k):
    keys = index.embeddings.data.astype(np.float64)
    query = np.asarray(query, dtype=np.float64)
    query = query / np.sqrt((query * query).sum())
    scored = [(-float(keys[row] @ query), row) for row in range(keys.shape[0])]
    scored.sort()
    return [row for _, row in scored[:k]], [-score for score, _ in scored[:k]]


def test_build_index_checks_counts_and_normalizes() -> None:
    index = build_index(["a", "b", "c"], EmbeddingMatrix(data=np.arange(1, 13).reshape(3, 4), ids=["x", "y", "z"]))
    assert index.size == 3
    np.testing.assert_allclose(np.linalg.norm(index.embeddings.data, axis=1), 1.0, atol=1e-6)

    with pytest.raises(GcdError) as excinfo:
        build_index(["a", "b"], EmbeddingMatrix(data=np.ones((3, 4)), ids=["x", "y", "z"]))
    assert excinfo.value.code == "COUNT_MISMATCH"

    with pytest.raises(GcdError) as zero:
        build_index(["a"], EmbeddingMatrix(data=np.zeros((1, 4)), ids=["x"]))
    assert zero.value.code == "ZERO_NORM"


def test_self_similarity_and_scale_invariance() -> None:
    index = _corpus(200, 16)
    query = index.embeddings.data[37]

    hits = query_topk(index, query, k=3)
    assert hits[0].corpus_row == 37
    assert abs(hits[0].score - 1.0) <= 1e-6
    assert hits[0].text == "caption 37"

    scaled = query_topk(index, query * 12.5, k=3)
    assert [hit.corpus_row for hit in scaled] == [hit.corpus_row for hit in hits]
    np.testing.assert_allclose([hit.score for hit in scaled], [hit.score for hit in hits], atol=1e-6)


@pytest.mark.parametrize("k", [1, 4, 16])
def test_topk_matches_exhaustive_scan(k: int) -> None:
    index = _corpus(1000, 24, seed=5)
    queries = np.random.default_rng(6).standard_normal((100, 24))

    rows, scores = search(index, queries, k)

    for position, query in enumerate(queries):
        expected_rows, expected_scores = _exhaustive(index, query, k)
        assert rows[position].tolist() == expected_rows
        np.testing.assert_allclose(scores[position], expected_scores, atol=1e-6)
        assert all(scores[position][i] >= scores[position][i + 1] for i in range(k - 1))


def test_ties_break_by_ascending_corpus_row() -> None:
    data = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.6, 0.8]])
    index = build_index(["a", "b", "c", "d", "e"], EmbeddingMatrix(data=data, ids=list("abcde")))

    hits = query_topk(index, np.array([1.0, 0.0]), k=3)

    assert [hit.corpus_row for hit in hits] == [1, 3, 4]


def test_batch_query_agrees_with_single_queries() -> None:
    index = _corpus(300, 12, seed=8)
    queries = np.random.default_rng(9).standard_normal((50, 12))
    queries[7] = queries[3]

    matrix = EmbeddingMatrix(data=queries, ids=[str(i) for i in range(50)])
    batched = batch_query(index, matrix, k=4)

    assert [hit.corpus_row for hit in batched[7]] == [hit.corpus_row for hit in batched[3]]
    for position in range(50):
        single = query_topk(index, matrix.data[position], k=4)
        assert [hit.corpus_row for hit in batched[position]] == [hit.corpus_row for hit in single]
        np.testing.assert_allclose([hit.score for hit in batched[position]], [hit.score for hit in single], atol=1e-12)


def test_invalid_k_and_dimension_errors() -> None:
    index = _corpus(5, 4)
    for bad_k in (0, 6):
        with pytest.raises(GcdError) as excinfo:
            query_topk(index, np.ones(4), k=bad_k)
        assert excinfo.value.code == "INVALID_K"
    with pytest.raises(GcdError) as excinfo:
        query_topk(index, np.ones(3), k=2)
    assert excinfo.value.code == "DIM_MISMATCH"


def test_rebuilt_and_persisted_indexes_answer_identically(tmp_path: Path) -> None:
    index = _corpus(10000, 8, seed=2)
    rebuilt = _corpus(10000, 8, seed=2)
    queries = np.random.default_rng(4).standard_normal((20, 8))

    restored = load_index(save_index(index, tmp_path / "corpus.emb"))
    assert restored.texts == index.texts
    assert (tmp_path / "corpus.emb.txt").exists()

    rows, scores = search(index, queries, 4)
    for other in (rebuilt, restored):
        other_rows, other_scores = search(other, queries, 4)
        assert np.array_equal(rows, other_rows)
        assert np.array_equal(scores, other_scores)


def test_load_corpus_pairs_caption_lines_with_rows(tmp_path: Path) -> None:
    text_path = write_captions(tmp_path / "corpus.txt", ["a dog on grass", "a red car"])
    index = _corpus(2, 3)
    emb_path = save_matrix(index.embeddings, tmp_path / "corpus.emb")
    loaded = load_corpus(text_path, emb_path)

    assert loaded.texts == ("a dog on grass", "a red car")
    assert query_topk(loaded, index.embeddings.data[1], k=1)[0].text == "a red car"

    (tmp_path / "short.txt").write_text("only one\n", encoding="utf-8")
    with pytest.raises(GcdError) as excinfo:
        load_corpus(tmp_path / "short.txt", emb_path)
    assert excinfo.value.code == "COUNT_MISMATCH"
