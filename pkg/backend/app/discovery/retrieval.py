"""Exact cosine top-k retrieval over a caption corpus."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from backend.app.contracts import write_table
from backend.app.error_handlers import GcdError

from .embedstore import l2_normalize, load_matrix, save_matrix, unit_rows
from .models import EmbeddingMatrix, RetrievalHit

DEFAULT_K = 4
QUERY_BLOCK = 256
UNIT_TOLERANCE = 1e-6

QueryInput = Union[EmbeddingMatrix, np.ndarray]


@dataclass(frozen=True, eq=False)
class CorpusIndex:
    texts: Tuple[str, ...]
    embeddings: EmbeddingMatrix
    _keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        texts = tuple(self.texts)
        if len(texts) != self.embeddings.rows:
            raise GcdError(
                code="COUNT_MISMATCH",
                message=f"{len(texts)} captions for {self.embeddings.rows} embedding rows",
            )
        keys = self.embeddings.as_float64()
        norms = np.sqrt(np.einsum("ij,ij->i", keys, keys))
        off = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOLERANCE)
        if off.size:
            raise GcdError(code="ZERO_NORM", message=f"corpus row {int(off[0])} is not unit-norm")
        keys.setflags(write=False)
        object.__setattr__(self, "texts", texts)
        object.__setattr__(self, "_keys", keys)

    @property
    def size(self) -> int:
        return self.embeddings.rows

    @property
    def dims(self) -> int:
        return self.embeddings.dims


def build_index(texts: Sequence[str], embeddings: EmbeddingMatrix) -> CorpusIndex:
    if len(texts) != embeddings.rows:
        raise GcdError(code="COUNT_MISMATCH", message=f"{len(texts)} captions for {embeddings.rows} embedding rows")
    return CorpusIndex(texts=tuple(texts), embeddings=l2_normalize(embeddings))


def _check_k(index: CorpusIndex, k: int) -> int:
    if isinstance(k, bool) or int(k) != k:
        raise GcdError(code="INVALID_K", message=f"k must be an integer, got {k!r}")
    k = int(k)
    if k < 1 or k > index.size:
        raise GcdError(code="INVALID_K", message=f"k must be in [1, {index.size}], got {k}")
    return k


def _as_rows(queries: QueryInput) -> np.ndarray:
    values = queries.data if isinstance(queries, EmbeddingMatrix) else np.asarray(queries)
    if values.ndim == 1:
        values = values[None, :]
    if values.ndim != 2:
        raise GcdError(code="DIM_MISMATCH", message=f"queries must be 1-D or 2-D, got {values.ndim}-D")
    return values


def _top_rows(scores: np.ndarray, k: int) -> np.ndarray:
    n = scores.shape[0]
    if k < n:
        threshold = np.partition(scores, n - k)[n - k]
        candidates = np.flatnonzero(scores >= threshold)
    else:
        candidates = np.arange(n)
    # score descending, then corpus row ascending
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:k]]


def search(index: CorpusIndex, queries: QueryInput, k: int = DEFAULT_K) -> Tuple[np.ndarray, np.ndarray]:
    """Return (rows, scores), each shaped (num_queries, k), for every query row."""
    k = _check_k(index, k)
    values = _as_rows(queries)
    if values.shape[1] != index.dims:
        raise GcdError(code="DIM_MISMATCH", message=f"query dims {values.shape[1]} != corpus dims {index.dims}")

    unit = unit_rows(values)
    rows = np.empty((unit.shape[0], k), dtype=np.int64)
    scores = np.empty((unit.shape[0], k), dtype=np.float64)
    for start in range(0, unit.shape[0], QUERY_BLOCK):
        block = unit[start : start + QUERY_BLOCK] @ index._keys.T
        for offset, row_scores in enumerate(block):
            top = _top_rows(row_scores, k)
            rows[start + offset] = top
            scores[start + offset] = row_scores[top]
    return rows, scores


def batch_query(index: CorpusIndex, queries: QueryInput, k: int = DEFAULT_K) -> List[List[RetrievalHit]]:
    rows, scores = search(index, queries, k)
    return [
        [RetrievalHit(corpus_row=int(row), score=float(score), text=index.texts[int(row)]) for row, score in zip(r, s)]
        for r, s in zip(rows, scores)
    ]


def query_topk(index: CorpusIndex, query: np.ndarray, k: int = DEFAULT_K) -> List[RetrievalHit]:
    query = np.asarray(query)
    if query.ndim != 1:
        raise GcdError(code="DIM_MISMATCH", message="query_topk takes a single vector")
    return batch_query(index, query[None, :], k)[0]


def read_captions(path: Path) -> List[str]:
    text = Path(path).read_text(encoding="utf-8")
    if text.endswith("\n"):
        text = text[:-1]
    if not text:
        raise GcdError(code="EMPTY_INPUT", message=f"{path}: caption file is empty")
    return [line[:-1] if line.endswith("\r") else line for line in text.split("\n")]


def load_corpus(text_path: Path, emb_path: Path) -> CorpusIndex:
    return build_index(read_captions(text_path), load_matrix(emb_path))


def _captions_path(path: Path) -> Path:
    return Path(f"{path}.txt")


def write_captions(path: Path, texts: Sequence[str]) -> Path:
    if any("\n" in text or "\r" in text for text in texts):
        raise GcdError(code="BAD_ID_BLOCK", message="captions may not contain line breaks")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{text}\n" for text in texts), encoding="utf-8")
    return path


def save_index(index: CorpusIndex, path: Path) -> Path:
    write_captions(_captions_path(path), index.texts)
    return save_matrix(index.embeddings, path)


def load_index(path: Path) -> CorpusIndex:
    texts = read_captions(_captions_path(path))
    return CorpusIndex(texts=tuple(texts), embeddings=load_matrix(path))


def write_hits(path: Path, query_ids: Sequence[str], hits: Sequence[Sequence[RetrievalHit]]) -> Path:
    write_table(
        path,
        ("query_id", "rank", "corpus_row", "score"),
        (
            (query_id, rank, hit.corpus_row, repr(hit.score))
            for query_id, query_hits in zip(query_ids, hits)
            for rank, hit in enumerate(query_hits, start=1)
        ),
    )
    return Path(path)
