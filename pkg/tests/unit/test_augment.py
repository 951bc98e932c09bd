from pathlib import Path

import numpy as np
import pytest

from backend.app.discovery.augment import augment_dataset, fuse, max_pool, mean_pool, pool_views, write_provenance
from backend.app.discovery.models import EmbeddingMatrix
from backend.app.discovery.reprloss import init_head
from backend.app.discovery.retrieval import build_index, query_topk
from backend.app.error_handlers import GcdError


def _matrix(values, prefix: str) -> EmbeddingMatrix:
    return EmbeddingMatrix(data=values, ids=[f"{prefix}-{i}" for i in range(len(values))])


def test_mean_pool_examples() -> None:
    vector = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(mean_pool([vector, vector, vector]), vector)
    np.testing.assert_allclose(mean_pool([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])

    vectors = np.random.default_rng(1).standard_normal((7, 16))
    expected = [sum(float(vectors[row, col]) for row in range(7)) / 7 for col in range(16)]
    np.testing.assert_allclose(mean_pool(vectors), expected, atol=1e-7)
    np.testing.assert_allclose(mean_pool(vectors[::-1]), mean_pool(vectors), atol=1e-12)


def test_pooling_errors_and_max_pool() -> None:
    with pytest.raises(GcdError) as empty:
        mean_pool([])
    assert empty.value.code == "EMPTY_INPUT"
    with pytest.raises(GcdError) as ragged:
        mean_pool([np.ones(2), np.ones(3)])
    assert ragged.value.code == "RAGGED_INPUT"

    vectors = np.array([[1.0, -2.0], [0.5, 3.0], [-1.0, 0.0]])
    np.testing.assert_allclose(max_pool(vectors), [1.0, 3.0])
    np.testing.assert_allclose(pool_views(vectors[[2, 0, 1]], "max"), [1.0, 3.0])


def test_fuse_examples() -> None:
    fused = fuse(np.array([1.0, 0.0]), [np.array([0.0, 2.0])])
    np.testing.assert_allclose(fused.vector, [1.0, 0.0, 0.0, 1.0])

    image_only = fuse(np.array([3.0, 4.0]), None)
    np.testing.assert_allclose(image_only.vector, [0.6, 0.8])

    first = fuse(np.array([2.0, 1.0]), [np.array([5.0, -1.0, 0.0])])
    second = fuse(np.array([2.0, 1.0]), [np.array([0.0, 1.0, 1.0]), np.array([1.0, 0.0, 0.0])])
    np.testing.assert_array_equal(first.vector[:2], second.vector[:2])
    assert first.vector.shape == (5,)

    with pytest.raises(GcdError) as excinfo:
        fuse(np.array([1.0, 0.0]), [np.array([1.0, 0.0]), np.array([-1.0, 0.0])], image_id="img-4")
    assert excinfo.value.code == "ZERO_NORM"
    assert "img-4" in excinfo.value.message


def test_self_retrieval_copies_paired_caption() -> None:
    rng = np.random.default_rng(2)
    pairs = rng.standard_normal((6, 5))
    images = _matrix(pairs, "img")
    index = build_index([f"c{i}" for i in range(6)], _matrix(pairs, "cap"))

    augmented = augment_dataset(images, index, k=1)

    assert augmented.views.rows == 6
    assert augmented.views.dims == 10
    np.testing.assert_allclose(augmented.views.data[:, 5:], index.embeddings.data, atol=1e-6)
    assert augmented.provenance == tuple((row,) for row in range(6))


def test_augment_dataset_matches_manual_composition(tmp_path: Path) -> None:
    rng = np.random.default_rng(3)
    images = _matrix(rng.standard_normal((20, 6)), "img")
    index = build_index([f"c{i}" for i in range(40)], _matrix(rng.standard_normal((40, 6)), "cap"))

    augmented = augment_dataset(images, index, k=4)

    for row in range(20):
        hits = query_topk(index, images.data[row], k=4)
        rows = [hit.corpus_row for hit in hits]
        expected = fuse(images.data[row], index.embeddings.data[rows]).vector
        np.testing.assert_allclose(augmented.views.data[row], expected, atol=1e-6)
        assert augmented.provenance[row] == tuple(rows)

    again = augment_dataset(images, index, k=4)
    assert again.views.data.tobytes() == augmented.views.data.tobytes()

    lines = write_provenance(tmp_path / "provenance.csv", augmented).read_text(encoding="utf-8").splitlines()
    assert lines[0] == "image_id,rank,corpus_row"
    assert lines[1] == f"img-0,1,{augmented.provenance[0][0]}"
    assert len(lines) == 1 + 20 * 4


def test_text_disabled_gives_normalized_image_view() -> None:
    images = _matrix(np.array([[3.0, 4.0], [0.0, 5.0]]), "img")

    for augmented in (augment_dataset(images, None, k=4, use_text=False), augment_dataset(images, None, k=0)):
        np.testing.assert_allclose(augmented.views.data, [[0.6, 0.8], [0.0, 1.0]], atol=1e-7)
        assert augmented.provenance == ((), ())

    with pytest.raises(GcdError) as excinfo:
        augment_dataset(images, None, k=2)
    assert excinfo.value.code == "CONFIG_ERROR"


def test_projection_is_applied_after_concatenation() -> None:
    rng = np.random.default_rng(4)
    images = _matrix(rng.standard_normal((5, 3)), "img")
    index = build_index([f"c{i}" for i in range(8)], _matrix(rng.standard_normal((8, 3)), "cap"))
    head = init_head(6, 4, seed=1)

    plain = augment_dataset(images, index, k=2)
    projected = augment_dataset(images, index, k=2, projection=head)

    assert projected.views.dims == 4
    raw = plain.views.data.astype(np.float64) @ head.weight + head.bias
    expected = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    np.testing.assert_allclose(projected.views.data, expected, atol=1e-6)
