"""Semi-supervised k-means: labeled items stay pinned to their class cluster."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from backend.app.contracts import read_contract_rows, write_contract_rows, write_table
from backend.app.error_handlers import GcdError
from backend.app.logging_config import get_logger, log_event
from backend.app.parameter_models import SSKMeansConfig

from .embedstore import SplitIndex, index_split, save_matrix
from .models import ClusteringResult, DatasetSplit, EmbeddingMatrix

LOGGER = get_logger("clipgcd.cluster")
ASSIGN_BLOCK = 4096


def _class_means(values: np.ndarray, positions: SplitIndex) -> np.ndarray:
    seen = len(positions.seen_classes)
    counts = np.bincount(positions.labeled_classes, minlength=seen)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise GcdError(code="EMPTY_CLASS", message=f"seen class {positions.seen_classes[int(empty[0])]!r} has no labeled items")
    sums = np.zeros((seen, values.shape[1]))
    np.add.at(sums, positions.labeled_classes, values[positions.labeled_rows])
    return sums / counts[:, None]


def _check_k(config: SSKMeansConfig, positions: SplitIndex) -> None:
    seen = len(positions.seen_classes)
    if config.k_total < seen:
        raise GcdError(code="CONFIG_ERROR", message=f"k_total={config.k_total} is smaller than the {seen} seen classes")
    if config.k_total - seen > positions.unlabeled_rows.size:
        raise GcdError(
            code="CONFIG_ERROR",
            message=f"{config.k_total - seen} centroids to seed from only {positions.unlabeled_rows.size} unlabeled items",
        )


def _squared_distances(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    value_norms = np.einsum("ij,ij->i", values, values)
    centroid_norms = np.einsum("ij,ij->i", centroids, centroids)
    distances = value_norms[:, None] - 2.0 * values @ centroids.T + centroid_norms[None, :]
    return np.maximum(distances, 0.0)


def _nearest(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    labels = np.empty(values.shape[0], dtype=np.int64)
    for start in range(0, values.shape[0], ASSIGN_BLOCK):
        labels[start : start + ASSIGN_BLOCK] = np.argmin(
            _squared_distances(values[start : start + ASSIGN_BLOCK], centroids), axis=1
        )
    return labels


def _kmeanspp(candidates: np.ndarray, centers: List[np.ndarray], extra: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Draw ``extra`` centers from ``candidates`` with D^2 weighting against every center so far."""
    count = candidates.shape[0]
    if extra <= 0:
        return centers
    if not centers:
        centers.append(candidates[int(rng.integers(count))].copy())
        extra -= 1

    closest = np.full(count, np.inf)
    for center in centers:
        closest = np.minimum(closest, ((candidates - center) ** 2).sum(axis=1))
    for _ in range(extra):
        cumulative = np.cumsum(closest)
        if cumulative[-1] > 0.0:
            pick = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
        else:
            pick = int(rng.integers(count))
        centers.append(candidates[pick].copy())
        closest = np.minimum(closest, ((candidates - candidates[pick]) ** 2).sum(axis=1))
    return centers


def seed_centroids(fused: EmbeddingMatrix, split: DatasetSplit, config: SSKMeansConfig) -> np.ndarray:
    positions = index_split(fused, split)
    _check_k(config, positions)
    values = fused.as_float64()

    means = _class_means(values, positions)
    centers = list(means)
    rng = np.random.default_rng(config.seed)
    centers = _kmeanspp(values[positions.unlabeled_rows], centers, config.k_total - len(means), rng)
    return np.vstack(centers) if centers else np.empty((0, fused.dims))


def _centroid_means(values: np.ndarray, labels: np.ndarray, k_total: int) -> np.ndarray:
    # every cluster is non-empty here; rows are summed in item order within each cluster
    counts = np.bincount(labels, minlength=k_total)
    order = np.argsort(labels, kind="stable")
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    sums = np.add.reduceat(values[order], starts, axis=0)
    return sums / counts[:, None]


def _repair_empty(
    values: np.ndarray,
    labels: np.ndarray,
    centroids: np.ndarray,
    unlabeled_rows: np.ndarray,
    iteration: int,
) -> np.ndarray:
    k_total = centroids.shape[0]
    sizes = np.bincount(labels, minlength=k_total)
    empty = np.flatnonzero(sizes == 0)
    if not empty.size:
        return labels

    labels = labels.copy()
    offsets = values[unlabeled_rows] - centroids[labels[unlabeled_rows]]
    spread = np.einsum("ij,ij->i", offsets, offsets)
    for cluster in empty:
        donors = sizes[labels[unlabeled_rows]] > 1
        ranked = np.where(donors, spread, -np.inf)
        choice = int(np.argmax(ranked))
        row = int(unlabeled_rows[choice])
        sizes[labels[row]] -= 1
        sizes[cluster] += 1
        labels[row] = cluster
        spread[choice] = -np.inf
        log_event(LOGGER, logging.WARNING, "empty_cluster_repaired", iteration=iteration, cluster=int(cluster), row=row)
    return labels


def _sum_squared(values: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    offsets = values - centroids[labels]
    return float(np.einsum("ij,ij->", offsets, offsets))


def run(fused: EmbeddingMatrix, split: DatasetSplit, config: SSKMeansConfig) -> ClusteringResult:
    positions = index_split(fused, split)
    centroids = seed_centroids(fused, split, config)
    values = fused.as_float64()

    labels = np.zeros(fused.rows, dtype=np.int64)
    labels[positions.labeled_rows] = positions.labeled_classes
    unlabeled = positions.unlabeled_rows

    trace: List[float] = []
    history: List[np.ndarray] = []
    converged = False
    iterations = 0
    for iteration in range(config.max_iters):
        iterations = iteration + 1
        if unlabeled.size:
            labels[unlabeled] = _nearest(values[unlabeled], centroids)
        labels = _repair_empty(values, labels, centroids, unlabeled, iteration)

        updated = _centroid_means(values, labels, config.k_total)
        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        trace.append(_sum_squared(values, labels, centroids))
        if config.keep_history:
            history.append(labels.copy())
        if shift < config.tolerance:
            converged = True
            break

    log_event(
        LOGGER,
        logging.INFO,
        "sskmeans_finished",
        k_total=config.k_total,
        iterations=iterations,
        converged=converged,
        objective=trace[-1],
    )
    frozen = labels.copy()
    frozen.setflags(write=False)
    centroids.setflags(write=False)
    return ClusteringResult(
        ids=fused.ids,
        labels=frozen,
        centroids=centroids,
        objective_trace=tuple(trace),
        iterations_run=iterations,
        converged=converged,
        history=tuple(history),
    )


def objective(fused: EmbeddingMatrix, result: ClusteringResult) -> float:
    if tuple(result.ids) != fused.ids:
        raise GcdError(code="ID_MISMATCH", message="clustering result ids do not match the feature matrix")
    labels = np.asarray(result.labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= result.k_total):
        raise GcdError(code="MISSING_CENTROID", message=f"assignment references a cluster outside [0, {result.k_total})")
    return _sum_squared(fused.as_float64(), labels, np.asarray(result.centroids, dtype=np.float64))


def write_result(result: ClusteringResult, out_path: Path, ids: Optional[List[str]] = None) -> List[Path]:
    """Write ``<out>`` (id,cluster), ``<stem>.centroids.emb`` and ``<stem>.trace.csv``."""
    out_path = Path(out_path)
    assignment = result.assignment
    selected = ids if ids is not None else list(result.ids)
    write_contract_rows(out_path, "predictions", ([item_id, assignment[item_id]] for item_id in selected))

    stem = out_path.with_suffix("")
    centroid_path = save_matrix(
        EmbeddingMatrix(data=result.centroids, ids=tuple(f"c{index}" for index in range(result.k_total))),
        Path(f"{stem}.centroids.emb"),
    )
    trace_path = write_table(
        Path(f"{stem}.trace.csv"),
        ["iteration", "objective"],
        ([index + 1, repr(value)] for index, value in enumerate(result.objective_trace)),
    )
    return [out_path, centroid_path, trace_path]


def load_predictions(path: Path) -> Dict[str, int]:
    predictions: Dict[str, int] = {}
    for row in read_contract_rows(path, "predictions"):
        item_id = row["id"]
        if item_id in predictions:
            raise GcdError(code="DUPLICATE_ID", message=f"{path}: duplicate id {item_id!r}")
        try:
            predictions[item_id] = int(row["cluster"])
        except ValueError:
            raise GcdError(code="BAD_HEADER", message=f"{path}: cluster for {item_id!r} is not an integer") from None
    if not predictions:
        raise GcdError(code="EMPTY_INPUT", message=f"{path}: no predictions")
    return predictions
