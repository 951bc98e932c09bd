"""Contrastive objectives over a projection head trained on fixed embeddings.

All losses are evaluated in float64 and return analytic gradients with respect to
their input embeddings; ``head_loss`` chains those through row normalization and the
affine head so ``sgd_step`` can update the head parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from backend.app.error_handlers import GcdError, TrainingDiverged
from backend.app.logging_config import get_logger, log_event
from backend.app.parameter_models import LossConfig

from .embedstore import index_split, load_matrix, save_matrix, unit_rows
from .models import DatasetSplit, EmbeddingMatrix

LOGGER = get_logger("clipgcd.reprloss")


@dataclass(frozen=True, eq=False)
class ProjectionHead:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        weight = np.array(self.weight, dtype=np.float64, copy=True)
        bias = np.array(self.bias, dtype=np.float64, copy=True).reshape(-1)
        if weight.ndim != 2 or bias.shape[0] != weight.shape[1]:
            raise GcdError(code="DIM_MISMATCH", message=f"weight {weight.shape} and bias {bias.shape} disagree")
        if weight.shape[1] < 2:
            raise GcdError(code="CONFIG_ERROR", message=f"head output dims must be >= 2, got {weight.shape[1]}")
        if not (np.isfinite(weight).all() and np.isfinite(bias).all()):
            raise GcdError(code="NON_FINITE", message="head parameters must be finite")
        weight.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def in_dims(self) -> int:
        return int(self.weight.shape[0])

    @property
    def out_dims(self) -> int:
        return int(self.weight.shape[1])

    def as_stored(self) -> "ProjectionHead":
        return ProjectionHead(
            weight=self.weight.astype(np.float32).astype(np.float64),
            bias=self.bias.astype(np.float32).astype(np.float64),
        )


@dataclass(frozen=True, eq=False)
class Batch:
    """Paired anchor/view rows; ``labels`` only for the labeled sub-batch."""

    anchors: np.ndarray
    views: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        anchors = np.asarray(self.anchors, dtype=np.float64)
        if anchors.ndim != 2:
            raise GcdError(code="DIM_MISMATCH", message=f"anchors must be 2-D, got shape {anchors.shape}")
        views = None if self.views is None else np.asarray(self.views, dtype=np.float64)
        if views is not None and views.shape != anchors.shape:
            raise GcdError(code="DIM_MISMATCH", message=f"views {views.shape} do not pair with anchors {anchors.shape}")
        labels = None if self.labels is None else np.asarray(self.labels)
        if labels is not None and labels.shape != (anchors.shape[0],):
            raise GcdError(code="DIM_MISMATCH", message=f"{labels.shape[0]} labels for {anchors.shape[0]} anchors")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.anchors.shape[0])


@dataclass(frozen=True, eq=False)
class LossResult:
    value: float
    grad_anchors: np.ndarray
    grad_views: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class TotalLoss:
    value: float
    unsup_term: float
    sup_term: float
    grad_lab_anchors: Optional[np.ndarray]
    grad_lab_views: Optional[np.ndarray]
    grad_unlab_anchors: Optional[np.ndarray]
    grad_unlab_views: Optional[np.ndarray]


def _logits(left: np.ndarray, right: np.ndarray, tau: float) -> np.ndarray:
    if tau <= 0:
        raise GcdError(code="CONFIG_ERROR", message=f"tau must be > 0, got {tau}")
    logits = left @ right.T / tau
    if not np.isfinite(logits).all():
        raise GcdError(code="NON_FINITE", message="non-finite contrastive logits")
    return logits


def _offdiag_softmax(logits: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise log-sum-exp and softmax over n != i."""
    masked = logits.copy()
    np.fill_diagonal(masked, -np.inf)
    peak = masked.max(axis=1, keepdims=True)
    weights = np.exp(masked - peak)
    totals = weights.sum(axis=1, keepdims=True)
    return peak[:, 0] + np.log(totals[:, 0]), weights / totals


def unsup_loss(batch: Batch, tau: float) -> LossResult:
    if batch.views is None:
        raise GcdError(code="EMPTY_INPUT", message="the unsupervised loss needs a second view")
    size = batch.size
    if size < 2:
        raise GcdError(code="BATCH_TOO_SMALL", message="the unsupervised loss needs at least 2 items")

    logits = _logits(batch.anchors, batch.views, tau)
    lse, probs = _offdiag_softmax(logits)
    value = float(np.mean(lse - np.diag(logits)))

    coeff = (probs - np.eye(size)) / size
    return LossResult(
        value=value,
        grad_anchors=coeff @ batch.views / tau,
        grad_views=coeff.T @ batch.anchors / tau,
    )


def sup_loss(batch: Batch, tau: float) -> LossResult:
    if batch.labels is None:
        raise GcdError(code="EMPTY_POSITIVES", message="the supervised loss needs labels")
    size = batch.size
    if size < 2:
        raise GcdError(code="BATCH_TOO_SMALL", message="the supervised loss needs at least 2 items")

    positives = batch.labels[:, None] == batch.labels[None, :]
    np.fill_diagonal(positives, False)
    counts = positives.sum(axis=1)
    lonely = np.flatnonzero(counts == 0)
    if lonely.size:
        raise GcdError(code="EMPTY_POSITIVES", message=f"anchor {int(lonely[0])} has no same-label partner in the batch")

    logits = _logits(batch.anchors, batch.anchors, tau)
    lse, probs = _offdiag_softmax(logits)
    share = positives / counts[:, None]
    value = float(np.mean(lse - (share * logits).sum(axis=1)))

    coeff = (probs - share) / size
    return LossResult(value=value, grad_anchors=(coeff + coeff.T) @ batch.anchors / tau)


def total_loss(unlab: Optional[Batch], lab: Optional[Batch], config: LossConfig) -> TotalLoss:
    """(1 - lambda) * sum of unsupervised terms over B_L and B_U + lambda * sum of supervised terms over B_L."""
    parts = [part for part in (lab, unlab) if part is not None and part.size > 0]
    if not parts:
        raise GcdError(code="BATCH_TOO_SMALL", message="total loss needs at least one non-empty sub-batch")
    n_lab = lab.size if lab is not None else 0
    n_all = sum(part.size for part in parts)

    views = [part.views for part in parts]
    if any(view is None for view in views):
        raise GcdError(code="EMPTY_INPUT", message="every sub-batch needs a second view")
    joint = Batch(anchors=np.vstack([part.anchors for part in parts]), views=np.vstack(views))  # type: ignore[arg-type]
    unsup = unsup_loss(joint, config.tau)
    weight_u = (1.0 - config.lambda_) * n_all
    grad_anchors = weight_u * unsup.grad_anchors
    grad_views = weight_u * unsup.grad_views  # type: ignore[operator]
    unsup_term = unsup.value * n_all

    sup_term = 0.0
    if lab is not None and n_lab > 0:
        sup = sup_loss(lab, config.tau)
        sup_term = sup.value * n_lab
        grad_anchors[:n_lab] += config.lambda_ * n_lab * sup.grad_anchors

    return TotalLoss(
        value=(1.0 - config.lambda_) * unsup_term + config.lambda_ * sup_term,
        unsup_term=unsup_term,
        sup_term=sup_term,
        grad_lab_anchors=grad_anchors[:n_lab] if n_lab else None,
        grad_lab_views=grad_views[:n_lab] if n_lab else None,
        grad_unlab_anchors=grad_anchors[n_lab:] if unlab is not None and unlab.size else None,
        grad_unlab_views=grad_views[n_lab:] if unlab is not None and unlab.size else None,
    )


def init_head(in_dims: int, out_dims: Optional[int] = None, seed: int = 0) -> ProjectionHead:
    out_dims = int(out_dims or in_dims)
    if out_dims == in_dims:
        weight = np.eye(in_dims)
    else:
        weight = np.random.default_rng(seed).normal(0.0, 1.0 / math.sqrt(in_dims), size=(in_dims, out_dims))
    return ProjectionHead(weight=weight, bias=np.zeros(out_dims))


def _forward(head: ProjectionHead, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != head.in_dims:
        raise GcdError(code="DIM_MISMATCH", message=f"head expects {head.in_dims} input dims, got {values.shape}")
    hidden = values @ head.weight + head.bias
    norms = np.sqrt(np.einsum("ij,ij->i", hidden, hidden))
    if (norms == 0.0).any():
        raise GcdError(code="ZERO_NORM", message="head produced a zero vector")
    return hidden / norms[:, None], norms


def project(head: ProjectionHead, values: np.ndarray) -> np.ndarray:
    return _forward(head, values)[0]


def apply_head(head: ProjectionHead, matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    return EmbeddingMatrix(data=project(head, matrix.data), ids=matrix.ids)


def _backward(values: np.ndarray, outputs: np.ndarray, norms: np.ndarray, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    radial = np.einsum("ij,ij->i", outputs, grad_out)
    grad_hidden = (grad_out - outputs * radial[:, None]) / norms[:, None]
    return values.T @ grad_hidden, grad_hidden.sum(axis=0)


def head_loss(
    head: ProjectionHead,
    lab: Optional[Batch],
    unlab: Optional[Batch],
    config: LossConfig,
) -> Tuple[TotalLoss, np.ndarray, np.ndarray]:
    """Total loss of the head applied to raw input batches, with gradients for weight and bias."""
    cache = {}
    projected = {}
    for name, part in (("lab", lab), ("unlab", unlab)):
        if part is None or part.size == 0:
            projected[name] = None
            continue
        anchors, anchor_norms = _forward(head, part.anchors)
        views, view_norms = _forward(head, part.views)  # type: ignore[arg-type]
        cache[name] = (part, anchors, anchor_norms, views, view_norms)
        projected[name] = Batch(anchors=anchors, views=views, labels=part.labels)

    loss = total_loss(projected["unlab"], projected["lab"], config)
    grad_weight = np.zeros_like(head.weight)
    grad_bias = np.zeros_like(head.bias)
    grads = {
        "lab": (loss.grad_lab_anchors, loss.grad_lab_views),
        "unlab": (loss.grad_unlab_anchors, loss.grad_unlab_views),
    }
    for name, (part, anchors, anchor_norms, views, view_norms) in cache.items():
        grad_anchors, grad_views = grads[name]
        for inputs, outputs, norms, grad_out in (
            (part.anchors, anchors, anchor_norms, grad_anchors),
            (part.views, views, view_norms, grad_views),
        ):
            step_w, step_b = _backward(inputs, outputs, norms, grad_out)
            grad_weight += step_w
            grad_bias += step_b
    return loss, grad_weight, grad_bias


@dataclass(frozen=True, eq=False)
class StepResult:
    head: ProjectionHead
    loss: TotalLoss
    grad_weight: np.ndarray
    grad_bias: np.ndarray


def sgd_step(
    head: ProjectionHead,
    lab: Optional[Batch],
    unlab: Optional[Batch],
    config: LossConfig,
    lr: float,
) -> StepResult:
    loss, grad_weight, grad_bias = head_loss(head, lab, unlab, config)
    if not (math.isfinite(loss.value) and np.isfinite(grad_weight).all() and np.isfinite(grad_bias).all()):
        raise GcdError(code="NON_FINITE", message="non-finite loss or gradient")
    updated = ProjectionHead(weight=head.weight - lr * grad_weight, bias=head.bias - lr * grad_bias)
    return StepResult(head=updated, loss=loss, grad_weight=grad_weight, grad_bias=grad_bias)


def make_views(values: np.ndarray, sigma: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Two noisy, re-normalized copies of each row."""
    first = unit_rows(values + sigma * rng.standard_normal(values.shape))
    second = unit_rows(values + sigma * rng.standard_normal(values.shape))
    return first, second


def cosine_lr(lr: float, epoch: int, epochs: int) -> float:
    return lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


def _cycle(order: np.ndarray, step: int, size: int) -> np.ndarray:
    if order.size == 0:
        return order
    width = min(size, order.size)
    start = (step * size) % order.size
    return order[(start + np.arange(width)) % order.size]


def _with_partner(classes: np.ndarray) -> np.ndarray:
    values, counts = np.unique(classes, return_counts=True)
    return np.isin(classes, values[counts >= 2])


@dataclass(frozen=True, eq=False)
class TrainingResult:
    head: ProjectionHead
    loss_trace: Tuple[float, ...]


def train_head(
    images: EmbeddingMatrix,
    split: DatasetSplit,
    config: LossConfig,
    epochs: int = 100,
    lr: float = 5e-5,
    seed: int = 0,
    out_dims: Optional[int] = None,
    progress: bool = False,
) -> TrainingResult:
    if epochs < 1:
        raise GcdError(code="CONFIG_ERROR", message=f"epochs must be >= 1, got {epochs}")
    if lr < 0 or not math.isfinite(lr):
        raise GcdError(code="CONFIG_ERROR", message=f"lr must be a finite value >= 0, got {lr}")

    positions = index_split(images, split)
    inputs = unit_rows(images.data, images.ids)
    lab_rows, lab_classes, unlab_rows = positions.labeled_rows, positions.labeled_classes, positions.unlabeled_rows

    head = init_head(images.dims, out_dims, seed)
    rng = np.random.default_rng(seed)
    steps = max(
        math.ceil(lab_rows.size / config.labeled_batch_size),
        math.ceil(unlab_rows.size / config.unlabeled_batch_size),
        1,
    )

    trace: List[float] = []
    dropped_total = 0
    for epoch in tqdm(range(epochs), desc="train-head", disable=not progress):
        step_lr = cosine_lr(lr, epoch, epochs)
        lab_order = rng.permutation(lab_rows.size)
        unlab_order = rng.permutation(unlab_rows.size)
        step_losses: List[float] = []
        for step in range(steps):
            picked = _cycle(lab_order, step, config.labeled_batch_size)
            keep = _with_partner(lab_classes[picked])
            if keep.sum() < 2:
                keep[:] = False
            dropped_total += int((~keep).sum())
            sup_rows = lab_rows[picked[keep]]
            other_rows = np.concatenate([lab_rows[picked[~keep]], unlab_rows[_cycle(unlab_order, step, config.unlabeled_batch_size)]])
            if sup_rows.size + other_rows.size < 2:
                continue

            lab_batch = None
            if sup_rows.size:
                first, second = make_views(inputs[sup_rows], config.view_noise, rng)
                lab_batch = Batch(anchors=first, views=second, labels=lab_classes[picked[keep]])
            unlab_batch = None
            if other_rows.size:
                first, second = make_views(inputs[other_rows], config.view_noise, rng)
                unlab_batch = Batch(anchors=first, views=second)

            try:
                result = sgd_step(head, lab_batch, unlab_batch, config, step_lr)
            except GcdError as exc:
                if exc.code != "NON_FINITE":
                    raise
                raise TrainingDiverged(f"epoch {epoch} step {step}: {exc.message}", trace=trace) from exc
            head = result.head
            step_losses.append(result.loss.value)

        if not step_losses:
            raise GcdError(code="BATCH_TOO_SMALL", message="no training step had at least 2 items")
        epoch_loss = float(np.mean(step_losses))
        if not math.isfinite(epoch_loss):
            raise TrainingDiverged(f"epoch {epoch}: mean loss is not finite", trace=trace)
        trace.append(epoch_loss)
        log_event(LOGGER, logging.DEBUG, "head_epoch", epoch=epoch, lr=step_lr, loss=epoch_loss)

    if dropped_total:
        log_event(
            LOGGER,
            logging.WARNING,
            "sup_anchors_without_partner",
            dropped=dropped_total,
            detail="moved to the unsupervised term only",
        )
    return TrainingResult(head=head, loss_trace=tuple(trace))


def save_head(head: ProjectionHead, path: Path) -> Path:
    ids = tuple(f"w{row}" for row in range(head.in_dims)) + ("bias",)
    return save_matrix(EmbeddingMatrix(data=np.vstack([head.weight, head.bias[None, :]]), ids=ids), path)


def load_head(path: Path) -> ProjectionHead:
    stored = load_matrix(path)
    if stored.rows < 2 or stored.ids[-1] != "bias":
        raise GcdError(code="BAD_ID_BLOCK", message=f"{path}: not a projection head file")
    values = stored.as_float64()
    return ProjectionHead(weight=values[:-1], bias=values[-1])
