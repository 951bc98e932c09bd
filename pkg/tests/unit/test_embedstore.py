import struct
from pathlib import Path

import numpy as np
import pytest

from backend.app.discovery.embedstore import (
    index_split,
    l2_normalize,
    load_labels,
    load_matrix,
    load_split,
    make_split,
    save_labels,
    save_matrix,
    save_split,
)
from backend.app.discovery.models import DatasetSplit, EmbeddingMatrix
from backend.app.error_handlers import GcdError


def _golden_bytes(rows, ids) -> bytes:
    dims = len(rows[0])
    payload = b"EMB1" + struct.pack("<II", len(rows), dims)
    for row in rows:
        payload += struct.pack(f"<{dims}f", *row)
    return payload + "".join(f"{item_id}\n" for item_id in ids).encode("utf-8")


def _labels(counts) -> dict:
    labels = {}
    for class_index, count in enumerate(counts):
        for item in range(count):
            labels[f"c{class_index:03d}-{item:05d}"] = f"class-{class_index:03d}"
    return labels


def test_golden_file_loads_and_saves_byte_identically(tmp_path: Path) -> None:
    golden = tmp_path / "golden.emb"
    golden.write_bytes(_golden_bytes([[1.0, 2.0, 3.0, 4.0]], ["photo-α"]))

    matrix = load_matrix(golden)

    assert matrix.rows == 1 and matrix.dims == 4
    assert matrix.ids == ("photo-α",)
    assert matrix.data.dtype == np.float32
    assert matrix.data.tolist() == [[1.0, 2.0, 3.0, 4.0]]
    assert save_matrix(matrix, tmp_path / "copy.emb").read_bytes() == golden.read_bytes()


def test_round_trip_is_bit_exact(tmp_path: Path) -> None:
    rng = np.random.default_rng(3)
    original = EmbeddingMatrix(data=rng.standard_normal((5, 7)), ids=[f"id-{i}" for i in range(5)])

    loaded = load_matrix(save_matrix(original, tmp_path / "m.emb"))

    assert loaded.ids == original.ids
    assert loaded.data.tobytes() == original.data.tobytes()


@pytest.mark.parametrize(
    "payload, code",
    [
        (b"EMB2" + struct.pack("<II", 1, 1) + struct.pack("<f", 1.0) + b"a\n", "BAD_MAGIC"),
        (b"EMB1" + struct.pack("<II", 2, 3) + struct.pack("<5f", *range(5)), "TRUNCATED_PAYLOAD"),
        (b"EMB1" + struct.pack("<II", 1, 2) + struct.pack("<2f", 1.0, float("nan")) + b"a\n", "NON_FINITE"),
        (b"EMB1" + struct.pack("<II", 2, 1) + struct.pack("<2f", 1.0, 2.0) + b"a\na\n", "DUPLICATE_ID"),
        (b"EMB1" + struct.pack("<II", 2, 1) + struct.pack("<2f", 1.0, 2.0) + b"only-one\n", "DIM_MISMATCH"),
    ],
)
def test_load_rejects_malformed_files(tmp_path: Path, payload: bytes, code: str) -> None:
    path = tmp_path / "bad.emb"
    path.write_bytes(payload)

    with pytest.raises(GcdError) as excinfo:
        load_matrix(path)

    assert excinfo.value.code == code


def test_truncated_payload_reports_float_counts(tmp_path: Path) -> None:
    path = tmp_path / "short.emb"
    path.write_bytes(b"EMB1" + struct.pack("<II", 2, 3) + struct.pack("<5f", *range(5)))

    with pytest.raises(GcdError, match="expected 6 floats for 2x3, found 5"):
        load_matrix(path)


def test_l2_normalize_examples() -> None:
    normalized = l2_normalize(EmbeddingMatrix(data=[[3.0, 4.0], [0.0, 2.0]], ids=["a", "b"]))
    np.testing.assert_allclose(normalized.data, [[0.6, 0.8], [0.0, 1.0]], atol=1e-7)

    rng = np.random.default_rng(11)
    random = l2_normalize(EmbeddingMatrix(data=rng.standard_normal((10, 16)), ids=[str(i) for i in range(10)]))
    norms = [sum(float(v) ** 2 for v in row) ** 0.5 for row in random.data]
    assert all(abs(norm - 1.0) <= 1e-6 for norm in norms)

    again = l2_normalize(random)
    np.testing.assert_allclose(again.data, random.data, atol=1e-7)


def test_l2_normalize_names_zero_row() -> None:
    with pytest.raises(GcdError) as excinfo:
        l2_normalize(EmbeddingMatrix(data=[[1.0, 0.0], [0.0, 0.0]], ids=["ok", "blank-7"]))

    assert excinfo.value.code == "ZERO_NORM"
    assert "blank-7" in excinfo.value.message


@pytest.mark.parametrize(
    "num_classes, per_class, expected",
    [
        (10, 5000, (5, 10, 12500, 37500)),
        (100, 500, (80, 100, 20000, 30000)),
    ],
)
def test_split_reproduces_benchmark_counts(num_classes: int, per_class: int, expected) -> None:
    seen_fraction = 0.8 if num_classes == 100 else 0.5
    split = make_split(_labels([per_class] * num_classes), seen_fraction, 0.5, seed=0)

    assert (split.num_seen_classes, split.num_total_classes, len(split.labeled), len(split.unlabeled)) == expected


def test_split_is_a_deterministic_partition() -> None:
    labels = _labels([7, 9, 4, 6, 5])

    first = make_split(labels, 0.6, 0.5, seed=4)
    second = make_split(labels, 0.6, 0.5, seed=4)

    assert dict(first.labeled) == dict(second.labeled)
    assert set(first.labeled) | set(first.unlabeled) == set(labels)
    assert not set(first.labeled) & set(first.unlabeled)
    assert first.seen_classes == ("class-000", "class-001", "class-002")
    assert {labels[item_id] for item_id in first.unlabeled} == set(labels.values())
    assert first.unseen_classes == ("class-003", "class-004")
    for item_id in first.unlabeled:
        assert first.is_old(item_id) == (labels[item_id] in first.seen_classes)


def test_split_rejects_degenerate_inputs() -> None:
    with pytest.raises(GcdError, match="unlabeled set D_U empty"):
        make_split(_labels([4, 4]), 1.0, 1.0)
    with pytest.raises(GcdError) as single_item:
        make_split(_labels([1, 4]), 0.5, 0.5)
    assert single_item.value.code == "INVALID_SPLIT"
    with pytest.raises(GcdError) as bad_fraction:
        make_split(_labels([4, 4]), 0.0, 0.5)
    assert bad_fraction.value.code == "CONFIG_ERROR"


def test_label_and_split_files_round_trip(tmp_path: Path) -> None:
    labels = _labels([4, 4, 4])
    assert load_labels(save_labels(labels, tmp_path / "labels.csv")) == labels

    split = make_split(labels, 0.5, 0.5, seed=1)
    restored = load_split(save_split(split, tmp_path / "split.csv"))

    assert dict(restored.labeled) == dict(split.labeled)
    assert dict(restored.unlabeled) == dict(split.unlabeled)
    assert restored.seen_classes == split.seen_classes
    assert restored.all_classes == split.all_classes


def test_index_split_aligns_rows_and_detects_missing_ids() -> None:
    split = DatasetSplit(
        labeled={"a": "x", "c": "y"},
        unlabeled={"b": "x", "d": "z"},
        seen_classes=("y", "x"),
        all_classes=("x", "y", "z"),
    )
    matrix = EmbeddingMatrix(data=np.eye(4), ids=["d", "c", "b", "a"])

    positions = index_split(matrix, split)

    assert positions.labeled_rows.tolist() == [1, 3]
    assert positions.labeled_classes.tolist() == [1, 0]
    assert positions.unlabeled_rows.tolist() == [0, 2]

    with pytest.raises(GcdError) as excinfo:
        index_split(EmbeddingMatrix(data=np.eye(3), ids=["a", "b", "c"]), split)
    assert excinfo.value.code == "ID_MISMATCH"
