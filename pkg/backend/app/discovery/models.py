from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from backend.app.error_handlers import GcdError


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Immutable row-major float32 matrix with one opaque id per row."""

    data: np.ndarray
    ids: Tuple[str, ...]
    _positions: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim != 2:
            raise GcdError(code="DIM_MISMATCH", message=f"embedding data must be 2-D, got {data.ndim}-D")
        rows, dims = data.shape
        if rows < 1 or dims < 1:
            raise GcdError(code="EMPTY_INPUT", message=f"embedding matrix must be at least 1x1, got {rows}x{dims}")

        ids = tuple(str(item) for item in self.ids)
        if len(ids) != rows:
            raise GcdError(code="DIM_MISMATCH", message=f"{len(ids)} ids for {rows} rows")

        positions: Dict[str, int] = {}
        for index, item_id in enumerate(ids):
            if item_id in positions:
                raise GcdError(code="DUPLICATE_ID", message=f"duplicate id {item_id!r} at rows {positions[item_id]} and {index}")
            positions[item_id] = index

        finite = np.isfinite(data)
        if not finite.all():
            bad_row = int(np.argwhere(~finite)[0][0])
            raise GcdError(code="NON_FINITE", message=f"non-finite value in row {bad_row} (id {ids[bad_row]!r})")

        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "_positions", MappingProxyType(positions))

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def dims(self) -> int:
        return int(self.data.shape[1])

    def position(self, item_id: str) -> int:
        try:
            return self._positions[item_id]
        except KeyError:
            raise GcdError(code="ID_MISMATCH", message=f"unknown id {item_id!r}") from None

    def has_id(self, item_id: str) -> bool:
        return item_id in self._positions

    def as_float64(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def take(self, rows: Sequence[int]) -> "EmbeddingMatrix":
        indices = np.asarray(rows, dtype=np.int64)
        return EmbeddingMatrix(data=self.data[indices], ids=tuple(self.ids[int(i)] for i in indices))


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """Partition of items into D_L (labeled, seen classes) and D_U (true labels kept for evaluation)."""

    labeled: Mapping[str, str]
    unlabeled: Mapping[str, str]
    seen_classes: Tuple[str, ...]
    all_classes: Tuple[str, ...]

    def __post_init__(self) -> None:
        labeled = dict(self.labeled)
        unlabeled = dict(self.unlabeled)
        seen = tuple(sorted(set(self.seen_classes)))
        every = tuple(sorted(set(self.all_classes)))

        overlap = labeled.keys() & unlabeled.keys()
        if overlap:
            raise GcdError(code="INVALID_SPLIT", message=f"ids in both D_L and D_U: {sorted(overlap)[:5]}")
        if not set(seen) <= set(every):
            raise GcdError(code="INVALID_SPLIT", message="seen classes must be a subset of all classes")

        stray_labeled = sorted({label for label in labeled.values() if label not in seen})
        if stray_labeled:
            raise GcdError(code="INVALID_SPLIT", message=f"labeled items carry unseen classes: {stray_labeled[:5]}")
        stray_unlabeled = sorted({label for label in unlabeled.values() if label not in every})
        if stray_unlabeled:
            raise GcdError(code="INVALID_SPLIT", message=f"unlabeled items carry unknown classes: {stray_unlabeled[:5]}")

        object.__setattr__(self, "labeled", MappingProxyType(labeled))
        object.__setattr__(self, "unlabeled", MappingProxyType(unlabeled))
        object.__setattr__(self, "seen_classes", seen)
        object.__setattr__(self, "all_classes", every)

    @property
    def num_seen_classes(self) -> int:
        return len(self.seen_classes)

    @property
    def num_total_classes(self) -> int:
        return len(self.all_classes)

    @property
    def unseen_classes(self) -> Tuple[str, ...]:
        seen = set(self.seen_classes)
        return tuple(name for name in self.all_classes if name not in seen)

    @property
    def labeled_ids(self) -> Tuple[str, ...]:
        return tuple(self.labeled.keys())

    @property
    def unlabeled_ids(self) -> Tuple[str, ...]:
        return tuple(self.unlabeled.keys())

    def truth(self) -> Dict[str, str]:
        merged = dict(self.labeled)
        merged.update(self.unlabeled)
        return merged

    def is_old(self, item_id: str) -> bool:
        return self.unlabeled[item_id] in self.seen_classes


@dataclass(frozen=True)
class RetrievalHit:
    corpus_row: int
    score: float
    text: str


@dataclass(frozen=True, eq=False)
class FusedView:
    vector: np.ndarray
    image_id: str = ""
    corpus_rows: Tuple[int, ...] = ()


@dataclass(frozen=True, eq=False)
class ClusteringResult:
    ids: Tuple[str, ...]
    labels: np.ndarray
    centroids: np.ndarray
    objective_trace: Tuple[float, ...]
    iterations_run: int
    converged: bool
    history: Tuple[np.ndarray, ...] = ()

    @property
    def assignment(self) -> Dict[str, int]:
        return {item_id: int(label) for item_id, label in zip(self.ids, self.labels)}

    @property
    def k_total(self) -> int:
        return int(self.centroids.shape[0])


def format_percent(value: Optional[float]) -> str:
    if value is None:
        return "-"
    return f"{100.0 * value:.1f}"


@dataclass(frozen=True, eq=False)
class EvalReport:
    acc_all: float
    acc_old: Optional[float]
    acc_new: Optional[float]
    permutation: Mapping[int, Optional[str]]
    contingency: np.ndarray
    cluster_labels: Tuple[int, ...]
    class_labels: Tuple[str, ...]
    num_items: int

    def summary_line(self) -> str:
        return "All/Old/New = " + "/".join(format_percent(value) for value in (self.acc_all, self.acc_old, self.acc_new))

    def percentages(self) -> Tuple[str, str, str]:
        return (format_percent(self.acc_all), format_percent(self.acc_old), format_percent(self.acc_new))
