"""Synthetic aligned image/caption embeddings with known class structure."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Tuple

import numpy as np

from backend.app.contracts import write_contract_rows
from backend.app.logging_config import get_logger, log_event
from backend.app.parameter_models import SynthConfig

from .embedstore import save_labels, save_matrix, unit_rows
from .models import EmbeddingMatrix
from .retrieval import write_captions

LOGGER = get_logger("clipgcd.synth")
CROWDED_COSINE = 0.9

IMAGES_FILE = "images.emb"
LABELS_FILE = "labels.csv"
CORPUS_TEXT_FILE = "corpus.txt"
CORPUS_EMB_FILE = "corpus.emb"
CORPUS_CLASSES_FILE = "corpus_classes.csv"


@dataclass(frozen=True, eq=False)
class SyntheticData:
    images: EmbeddingMatrix
    labels: Mapping[str, str]
    captions: Tuple[str, ...]
    corpus: EmbeddingMatrix
    caption_classes: Mapping[int, str]

    @property
    def class_names(self) -> Tuple[str, ...]:
        return tuple(sorted(set(self.labels.values())))


def class_names(count: int) -> List[str]:
    width = max(3, len(str(count - 1)))
    return [f"class-{index:0{width}d}" for index in range(count)]


def _orthonormal_map(rng: np.random.Generator, source_dims: int, target_dims: int) -> np.ndarray:
    if source_dims == target_dims:
        return np.eye(source_dims)
    left, _, right = np.linalg.svd(rng.standard_normal((source_dims, target_dims)), full_matrices=False)
    return left @ right


def _warn_if_crowded(prototypes: np.ndarray, modality: str) -> None:
    if prototypes.shape[0] < 2:
        return
    gram = prototypes @ prototypes.T
    np.fill_diagonal(gram, -1.0)
    closest = float(gram.max())
    if closest > CROWDED_COSINE:
        log_event(
            LOGGER,
            logging.WARNING,
            "synth_prototypes_crowded",
            modality=modality,
            dims=int(prototypes.shape[1]),
            classes=int(prototypes.shape[0]),
            max_cosine=round(closest, 4),
        )


def generate(config: SynthConfig) -> SyntheticData:
    rng = np.random.default_rng(config.seed)
    names = class_names(config.num_classes)

    image_prototypes = unit_rows(rng.standard_normal((config.num_classes, config.dims_image)))
    independent = unit_rows(rng.standard_normal((config.num_classes, config.dims_text)))
    shared = unit_rows(image_prototypes @ _orthonormal_map(rng, config.dims_image, config.dims_text))
    text_prototypes = unit_rows(config.alpha * shared + (1.0 - config.alpha) * independent)
    _warn_if_crowded(image_prototypes, "image")
    _warn_if_crowded(text_prototypes, "text")

    item_classes = np.repeat(np.arange(config.num_classes), config.items_per_class)
    images = unit_rows(
        image_prototypes[item_classes] + config.sigma_image * rng.standard_normal((item_classes.size, config.dims_image))
    )
    width = max(6, len(str(item_classes.size)))
    image_ids = tuple(f"img-{index:0{width}d}" for index in range(item_classes.size))
    labels: Dict[str, str] = {item_id: names[cls] for item_id, cls in zip(image_ids, item_classes)}

    caption_classes = np.repeat(np.arange(config.num_classes), config.captions_per_class)
    caption_vectors = unit_rows(
        text_prototypes[caption_classes] + config.sigma_text * rng.standard_normal((caption_classes.size, config.dims_text))
    )
    order = rng.permutation(caption_classes.size)
    caption_classes = caption_classes[order]
    caption_vectors = caption_vectors[order]
    captions = tuple(f"caption {row} about {names[cls]}" for row, cls in enumerate(caption_classes))

    log_event(
        LOGGER,
        logging.INFO,
        "synth_generated",
        classes=config.num_classes,
        items=int(item_classes.size),
        captions=int(caption_classes.size),
        alpha=config.alpha,
        seed=config.seed,
    )
    return SyntheticData(
        images=EmbeddingMatrix(data=images, ids=image_ids),
        labels=labels,
        captions=captions,
        corpus=EmbeddingMatrix(data=caption_vectors, ids=tuple(f"cap-{row}" for row in range(caption_classes.size))),
        caption_classes={row: names[cls] for row, cls in enumerate(caption_classes)},
    )


def write_dataset(data: SyntheticData, out_dir: Path) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return {
        "images": save_matrix(data.images, out_dir / IMAGES_FILE),
        "labels": save_labels(data.labels, out_dir / LABELS_FILE),
        "corpus_text": write_captions(out_dir / CORPUS_TEXT_FILE, data.captions),
        "corpus_emb": save_matrix(data.corpus, out_dir / CORPUS_EMB_FILE),
        "corpus_classes": write_contract_rows(
            out_dir / CORPUS_CLASSES_FILE, "corpus_classes", sorted(data.caption_classes.items())
        ),
    }
