from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from backend.app.contracts import read_contract_rows, write_contract_rows
from backend.app.error_handlers import GcdError

from .models import DatasetSplit, EmbeddingMatrix

MAGIC = b"EMB1"
_SHAPE = struct.Struct("<II")
_HEADER_BYTES = len(MAGIC) + _SHAPE.size


def load_matrix(path: Path) -> EmbeddingMatrix:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise GcdError(code="BAD_MAGIC", message=f"{path}: not an EMB1 file")
    if len(raw) < _HEADER_BYTES:
        raise GcdError(code="TRUNCATED_PAYLOAD", message=f"{path}: header is truncated")

    rows, dims = _SHAPE.unpack_from(raw, len(MAGIC))
    if rows < 1 or dims < 1:
        raise GcdError(code="EMPTY_INPUT", message=f"{path}: declared shape {rows}x{dims}")

    payload_end = _HEADER_BYTES + rows * dims * 4
    if len(raw) < payload_end:
        have = (len(raw) - _HEADER_BYTES) // 4
        raise GcdError(
            code="TRUNCATED_PAYLOAD",
            message=f"{path}: expected {rows * dims} floats for {rows}x{dims}, found {have}",
        )

    values = np.frombuffer(raw, dtype="<f4", count=rows * dims, offset=_HEADER_BYTES).reshape(rows, dims)

    if len(raw) == payload_end:
        raise GcdError(code="DIM_MISMATCH", message=f"{path}: id block is missing")
    try:
        id_block = raw[payload_end:].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise GcdError(code="BAD_ID_BLOCK", message=f"{path}: id block is not valid UTF-8") from exc
    if id_block.endswith("\n"):
        id_block = id_block[:-1]
    ids = id_block.split("\n")
    if len(ids) != rows:
        raise GcdError(code="DIM_MISMATCH", message=f"{path}: {len(ids)} ids for {rows} rows")

    return EmbeddingMatrix(data=values.astype(np.float32), ids=tuple(ids))


def save_matrix(matrix: EmbeddingMatrix, path: Path) -> Path:
    bad = [item_id for item_id in matrix.ids if "\n" in item_id]
    if bad:
        raise GcdError(code="BAD_ID_BLOCK", message=f"ids may not contain newlines: {bad[:3]!r}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = b"".join(
        [
            MAGIC,
            _SHAPE.pack(matrix.rows, matrix.dims),
            np.ascontiguousarray(matrix.data, dtype="<f4").tobytes(),
            ("\n".join(matrix.ids) + "\n").encode("utf-8"),
        ]
    )
    path.write_bytes(payload)
    return path


def unit_rows(values: np.ndarray, ids: Optional[Sequence[str]] = None) -> np.ndarray:
    """Return a float64 copy of ``values`` with every row scaled to Euclidean norm 1."""
    values = np.asarray(values, dtype=np.float64)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[None, :]
    norms = np.sqrt(np.einsum("ij,ij->i", values, values))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        row = int(zero[0])
        label = ids[row] if ids is not None else f"row {row}"
        raise GcdError(code="ZERO_NORM", message=f"zero-norm vector cannot be normalized: {label}")
    out = values / norms[:, None]
    return out[0] if squeeze else out


def l2_normalize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    return EmbeddingMatrix(data=unit_rows(matrix.data, matrix.ids).astype(np.float32), ids=matrix.ids)


def load_labels(path: Path) -> Dict[str, str]:
    labels: Dict[str, str] = {}
    for row in read_contract_rows(path, "labels"):
        item_id = row["id"]
        if item_id in labels:
            raise GcdError(code="DUPLICATE_ID", message=f"{path}: duplicate id {item_id!r}")
        labels[item_id] = row["class_name"]
    if not labels:
        raise GcdError(code="EMPTY_INPUT", message=f"{path}: no labels")
    return labels


def save_labels(labels: Mapping[str, str], path: Path) -> Path:
    write_contract_rows(path, "labels", labels.items())
    return Path(path)


def make_split(
    labels: Mapping[str, str],
    seen_fraction: float = 0.5,
    labeled_fraction: float = 0.5,
    seed: int = 0,
) -> DatasetSplit:
    for name, value in (("seen_fraction", seen_fraction), ("labeled_fraction", labeled_fraction)):
        if not 0.0 < float(value) <= 1.0:
            raise GcdError(code="CONFIG_ERROR", message=f"{name} must be in (0, 1], got {value}")

    classes = sorted(set(labels.values()))
    if len(classes) < 2:
        raise GcdError(code="INVALID_SPLIT", message=f"need at least 2 classes, got {len(classes)}")

    num_seen = min(len(classes), max(1, math.ceil(seen_fraction * len(classes) - 1e-9)))
    seen = classes[:num_seen]

    members: Dict[str, list[str]] = {name: [] for name in seen}
    for item_id, class_name in labels.items():
        if class_name in members:
            members[class_name].append(item_id)

    rng = np.random.default_rng(seed)
    chosen: set[str] = set()
    for class_name in seen:
        ids = sorted(members[class_name])
        if len(ids) < 2:
            raise GcdError(
                code="INVALID_SPLIT",
                message=f"seen class {class_name!r} has {len(ids)} item(s) and cannot be split",
            )
        take = max(1, math.floor(labeled_fraction * len(ids) + 1e-9))
        order = rng.permutation(len(ids))
        chosen.update(ids[int(index)] for index in order[:take])

    labeled = {item_id: class_name for item_id, class_name in labels.items() if item_id in chosen}
    unlabeled = {item_id: class_name for item_id, class_name in labels.items() if item_id not in chosen}
    if not unlabeled:
        raise GcdError(code="INVALID_SPLIT", message="split leaves the unlabeled set D_U empty")

    return DatasetSplit(labeled=labeled, unlabeled=unlabeled, seen_classes=tuple(seen), all_classes=tuple(classes))


def save_split(split: DatasetSplit, path: Path) -> Path:
    rows = [(item_id, class_name, 1) for item_id, class_name in split.labeled.items()]
    rows.extend((item_id, class_name, 0) for item_id, class_name in split.unlabeled.items())
    write_contract_rows(path, "split", rows)
    return Path(path)


def load_split(path: Path) -> DatasetSplit:
    labeled: Dict[str, str] = {}
    unlabeled: Dict[str, str] = {}
    for row in read_contract_rows(path, "split"):
        item_id, class_name, flag = row["id"], row["class_name"], row["is_labeled"]
        if item_id in labeled or item_id in unlabeled:
            raise GcdError(code="DUPLICATE_ID", message=f"{path}: duplicate id {item_id!r}")
        if flag == "1":
            labeled[item_id] = class_name
        elif flag == "0":
            unlabeled[item_id] = class_name
        else:
            raise GcdError(code="INVALID_SPLIT", message=f"{path}: is_labeled must be 0 or 1, got {flag!r}")
    if not unlabeled:
        raise GcdError(code="INVALID_SPLIT", message=f"{path}: unlabeled set is empty")
    return DatasetSplit(
        labeled=labeled,
        unlabeled=unlabeled,
        seen_classes=tuple(set(labeled.values())),
        all_classes=tuple(set(labeled.values()) | set(unlabeled.values())),
    )


@dataclass(frozen=True, eq=False)
class SplitIndex:
    """Row positions of D_L and D_U inside one embedding matrix."""

    labeled_rows: np.ndarray
    labeled_classes: np.ndarray
    unlabeled_rows: np.ndarray
    seen_classes: tuple[str, ...]


def index_split(matrix: EmbeddingMatrix, split: DatasetSplit) -> SplitIndex:
    seen_index = {name: position for position, name in enumerate(split.seen_classes)}
    labeled_rows: list[int] = []
    labeled_classes: list[int] = []
    unlabeled_rows: list[int] = []
    for row, item_id in enumerate(matrix.ids):
        if item_id in split.labeled:
            labeled_rows.append(row)
            labeled_classes.append(seen_index[split.labeled[item_id]])
        elif item_id in split.unlabeled:
            unlabeled_rows.append(row)
        else:
            raise GcdError(code="ID_MISMATCH", message=f"matrix id {item_id!r} is not part of the split")

    expected = len(split.labeled) + len(split.unlabeled)
    if len(labeled_rows) + len(unlabeled_rows) != expected:
        missing = [item_id for item_id in split.truth() if not matrix.has_id(item_id)]
        raise GcdError(code="ID_MISMATCH", message=f"split ids missing from matrix: {missing[:5]}")

    return SplitIndex(
        labeled_rows=np.asarray(labeled_rows, dtype=np.int64),
        labeled_classes=np.asarray(labeled_classes, dtype=np.int64),
        unlabeled_rows=np.asarray(unlabeled_rows, dtype=np.int64),
        seen_classes=split.seen_classes,
    )
