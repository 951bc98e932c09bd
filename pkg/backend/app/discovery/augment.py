from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence, Tuple, Union

import numpy as np

from backend.app.contracts import write_table
from backend.app.error_handlers import GcdError

from .embedstore import unit_rows
from .models import EmbeddingMatrix, FusedView
from .reprloss import ProjectionHead, project
from .retrieval import CorpusIndex, search

PoolingStrategy = Literal["mean", "max"]
VectorsInput = Union[np.ndarray, Sequence[np.ndarray]]


def _stack(vectors: VectorsInput) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        stacked = np.asarray(vectors, dtype=np.float64)
        if stacked.ndim != 2:
            raise GcdError(code="RAGGED_INPUT", message=f"expected k x dims vectors, got shape {stacked.shape}")
    else:
        items = [np.asarray(vector, dtype=np.float64) for vector in vectors]
        if not items:
            raise GcdError(code="EMPTY_INPUT", message="cannot pool zero vectors")
        widths = {item.shape for item in items}
        if len(widths) != 1 or items[0].ndim != 1:
            raise GcdError(code="RAGGED_INPUT", message=f"vectors have mismatched shapes: {sorted(widths)}")
        stacked = np.vstack(items)
    if stacked.shape[0] == 0:
        raise GcdError(code="EMPTY_INPUT", message="cannot pool zero vectors")
    return stacked


def mean_pool(vectors: VectorsInput) -> np.ndarray:
    stacked = _stack(vectors)
    return stacked.sum(axis=0) / stacked.shape[0]


def max_pool(vectors: VectorsInput) -> np.ndarray:
    return _stack(vectors).max(axis=0)


def pool_views(vectors: VectorsInput, strategy: PoolingStrategy = "mean") -> np.ndarray:
    if strategy == "mean":
        return mean_pool(vectors)
    if strategy == "max":
        return max_pool(vectors)
    raise GcdError(code="CONFIG_ERROR", message=f"unknown pooling strategy {strategy!r}")


def fuse(
    image_vec: np.ndarray,
    text_vecs: Optional[VectorsInput],
    normalize: bool = True,
    pooling: PoolingStrategy = "mean",
    image_id: str = "",
    corpus_rows: Sequence[int] = (),
) -> FusedView:
    """Concatenate the image view with the pooled text view; ``text_vecs=None`` disables the text view."""
    image_view = np.asarray(image_vec, dtype=np.float64)
    if image_view.ndim != 1:
        raise GcdError(code="DIM_MISMATCH", message="image view must be a single vector")
    if normalize:
        image_view = unit_rows(image_view, [image_id or "image view"])

    if text_vecs is None:
        return FusedView(vector=image_view, image_id=image_id, corpus_rows=())

    text_view = pool_views(text_vecs, pooling)
    if normalize:
        text_view = unit_rows(text_view, [f"{image_id or 'image'} text view"])
    return FusedView(
        vector=np.concatenate([image_view, text_view]),
        image_id=image_id,
        corpus_rows=tuple(int(row) for row in corpus_rows),
    )


@dataclass(frozen=True, eq=False)
class AugmentedViews:
    views: EmbeddingMatrix
    provenance: Tuple[Tuple[int, ...], ...]


def augment_dataset(
    images: EmbeddingMatrix,
    index: Optional[CorpusIndex],
    k: int = 4,
    *,
    use_text: bool = True,
    normalize: bool = True,
    pooling: PoolingStrategy = "mean",
    queries: Optional[EmbeddingMatrix] = None,
    projection: Optional[ProjectionHead] = None,
) -> AugmentedViews:
    text_enabled = use_text and k > 0
    if text_enabled:
        if index is None:
            raise GcdError(code="CONFIG_ERROR", message="a corpus index is required when the text view is enabled")
        query_source = queries if queries is not None else images
        if query_source.rows != images.rows:
            raise GcdError(code="COUNT_MISMATCH", message=f"{query_source.rows} queries for {images.rows} images")
        hit_rows, _ = search(index, query_source, k)
    else:
        hit_rows = None

    vectors = []
    provenance = []
    for row, image_id in enumerate(images.ids):
        if hit_rows is None:
            view = fuse(images.data[row], None, normalize=normalize, image_id=image_id)
        else:
            rows = hit_rows[row]
            view = fuse(
                images.data[row],
                index.embeddings.data[rows],  # type: ignore[union-attr]
                normalize=normalize,
                pooling=pooling,
                image_id=image_id,
                corpus_rows=rows,
            )
        vectors.append(view.vector)
        provenance.append(view.corpus_rows)
    fused = np.vstack(vectors)

    if projection is not None:
        fused = project(projection, fused)

    return AugmentedViews(views=EmbeddingMatrix(data=fused, ids=images.ids), provenance=tuple(provenance))


def write_provenance(path: Path, augmented: AugmentedViews) -> Path:
    write_table(
        path,
        ("image_id", "rank", "corpus_row"),
        (
            (image_id, rank, corpus_row)
            for image_id, rows in zip(augmented.views.ids, augmented.provenance)
            for rank, corpus_row in enumerate(rows, start=1)
        ),
    )
    return Path(path)
