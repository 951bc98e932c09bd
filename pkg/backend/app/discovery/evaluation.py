"""Clustering accuracy under the best cluster-to-class matching, split into All/Old/New."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from backend.app.contracts import write_table
from backend.app.error_handlers import GcdError
from backend.app.logging_config import get_logger, log_event

from .models import DatasetSplit, EvalReport

LOGGER = get_logger("clipgcd.evaluation")


def contingency_table(
    pred: Mapping[str, int],
    truth: Mapping[str, str],
    ids: Sequence[str],
) -> Tuple[np.ndarray, Tuple[int, ...], Tuple[str, ...]]:
    clusters = tuple(sorted({int(pred[item_id]) for item_id in ids}))
    classes = tuple(sorted({truth[item_id] for item_id in ids}))
    cluster_index = {cluster: row for row, cluster in enumerate(clusters)}
    class_index = {name: column for column, name in enumerate(classes)}
    table = np.zeros((len(clusters), len(classes)), dtype=np.int64)
    for item_id in ids:
        table[cluster_index[int(pred[item_id])], class_index[truth[item_id]]] += 1
    return table, clusters, classes


def _optional_edges(gain: np.ndarray, match: np.ndarray) -> np.ndarray:
    """Edges (row, column) used by at least one maximum-gain perfect matching."""
    size = gain.shape[0]
    owner = np.empty(size, dtype=np.int64)
    owner[match] = np.arange(size)
    # moving the owner of column a onto column c changes the total by paths[a, c]
    held = gain[np.arange(size), match]
    paths = gain[owner, :] - held[owner][:, None]
    np.fill_diagonal(paths, 0.0)
    for pivot in range(size):
        paths = np.maximum(paths, paths[:, pivot : pivot + 1] + paths[pivot : pivot + 1, :])
    # row r may take column c iff some zero-gain exchange cycle passes through that move
    step = gain - held[:, None]
    return step + paths[:, match].T == 0.0


def _lexicographic_matching(gain: np.ndarray) -> np.ndarray:
    rows, columns = linear_sum_assignment(gain, maximize=True)
    match = np.empty(gain.shape[0], dtype=np.int64)
    match[rows] = columns
    allowed = _optional_edges(gain.astype(np.float64), match)

    size = gain.shape[0]
    owner = np.empty(size, dtype=np.int64)
    owner[match] = np.arange(size)
    fixed_columns = np.zeros(size, dtype=bool)

    def reroute(row: int, target: int, seen: np.ndarray) -> bool:
        for column in np.flatnonzero(allowed[row] & ~fixed_columns & ~seen):
            seen[column] = True
            if column == target or reroute(int(owner[column]), target, seen):
                match[row] = column
                owner[column] = row
                return True
        return False

    for row in range(size):
        for column in np.flatnonzero(allowed[row] & ~fixed_columns):
            column = int(column)
            current = int(match[row])
            if column != current:
                displaced = int(owner[column])
                seen = np.zeros(size, dtype=bool)
                seen[column] = True
                if not reroute(displaced, current, seen):
                    continue
                match[row] = column
                owner[column] = row
            fixed_columns[column] = True
            break
    return match


def match_clusters(table: np.ndarray) -> np.ndarray:
    """Column assigned to each row of the zero-padded square table; ties go lexicographically smallest."""
    size = max(table.shape)
    square = np.zeros((size, size), dtype=np.int64)
    square[: table.shape[0], : table.shape[1]] = table
    return _lexicographic_matching(square)


def _check_ids(pred: Mapping[str, int], truth: Mapping[str, str], ids: Sequence[str]) -> None:
    if not ids:
        raise GcdError(code="EMPTY_INPUT", message="nothing to evaluate")
    missing_pred = [item_id for item_id in ids if item_id not in pred]
    missing_truth = [item_id for item_id in ids if item_id not in truth]
    if missing_pred or missing_truth:
        raise GcdError(
            code="ID_MISMATCH",
            message=f"ids without prediction: {missing_pred[:5]}; ids without ground truth: {missing_truth[:5]}",
        )


def _fit(pred: Mapping[str, int], truth: Mapping[str, str], ids: Sequence[str]) -> EvalReport:
    table, clusters, classes = contingency_table(pred, truth, ids)
    columns = match_clusters(table)
    permutation: Dict[int, Optional[str]] = {}
    matched = 0
    for row, cluster in enumerate(clusters):
        column = int(columns[row])
        if column < len(classes):
            permutation[cluster] = classes[column]
            matched += int(table[row, column])
        else:
            permutation[cluster] = None
    return EvalReport(
        acc_all=matched / len(ids),
        acc_old=None,
        acc_new=None,
        permutation=permutation,
        contingency=table,
        cluster_labels=clusters,
        class_labels=classes,
        num_items=len(ids),
    )


def hungarian_acc(pred: Mapping[str, int], truth: Mapping[str, str]) -> EvalReport:
    if set(pred) != set(truth):
        extra = sorted(set(pred) ^ set(truth))
        raise GcdError(code="ID_MISMATCH", message=f"prediction and ground truth cover different ids: {extra[:5]}")
    ids = sorted(truth)
    _check_ids(pred, truth, ids)
    return _fit(pred, truth, ids)


def _accuracy(pred: Mapping[str, int], truth: Mapping[str, str], ids: Sequence[str], permutation: Mapping[int, Optional[str]]) -> Optional[float]:
    if not ids:
        return None
    hits = sum(1 for item_id in ids if permutation.get(int(pred[item_id])) == truth[item_id])
    return hits / len(ids)


def subset_report(
    pred: Mapping[str, int],
    truth: Mapping[str, str],
    split: DatasetSplit,
    per_subset: bool = False,
) -> EvalReport:
    """Score D_U only; Old/New reuse the All matching unless ``per_subset`` is set."""
    ids = list(split.unlabeled_ids)
    _check_ids(pred, truth, ids)
    drifted = [item_id for item_id in ids if truth[item_id] != split.unlabeled[item_id]]
    if drifted:
        raise GcdError(code="INVALID_SPLIT", message=f"ground truth disagrees with the split for {drifted[:5]}")

    old_ids = [item_id for item_id in ids if split.is_old(item_id)]
    new_ids = [item_id for item_id in ids if not split.is_old(item_id)]

    overall = _fit(pred, truth, ids)
    if per_subset:
        acc_old = _fit(pred, truth, old_ids).acc_all if old_ids else None
        acc_new = _fit(pred, truth, new_ids).acc_all if new_ids else None
    else:
        acc_old = _accuracy(pred, truth, old_ids, overall.permutation)
        acc_new = _accuracy(pred, truth, new_ids, overall.permutation)

    report = EvalReport(
        acc_all=overall.acc_all,
        acc_old=acc_old,
        acc_new=acc_new,
        permutation=overall.permutation,
        contingency=overall.contingency,
        cluster_labels=overall.cluster_labels,
        class_labels=overall.class_labels,
        num_items=overall.num_items,
    )
    log_event(
        LOGGER,
        logging.INFO,
        "evaluation_finished",
        items=len(ids),
        old_items=len(old_ids),
        new_items=len(new_ids),
        new_classes=len(split.unseen_classes),
        per_subset=per_subset,
        summary=report.summary_line(),
    )
    return report


def write_report(report: EvalReport, out_path: Path) -> List[Path]:
    """Write ``<out>`` (one row of percentages) and ``<stem>.permutation.csv``."""
    out_path = Path(out_path)
    write_table(out_path, ["acc_all", "acc_old", "acc_new"], [report.percentages()])
    permutation_path = write_table(
        Path(f"{out_path.with_suffix('')}.permutation.csv"),
        ["cluster", "class_name"],
        ([cluster, name or ""] for cluster, name in sorted(report.permutation.items())),
    )
    return [out_path, permutation_path]
