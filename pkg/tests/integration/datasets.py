from __future__ import annotations

from pathlib import Path
from typing import Any, Dict

from backend.app.config import PipelineConfig, config_from_mapping
from backend.app.discovery.synth import generate, write_dataset
from backend.app.parameter_models import SynthConfig

ACCEPTANCE_SYNTH: Dict[str, Any] = {
    "num_classes": 20,
    "dims_image": 64,
    "dims_text": 64,
    "items_per_class": 100,
    "captions_per_class": 20,
    "sigma_image": 0.3,
    "sigma_text": 0.1,
    "alpha": 0.9,
}

SMALL_SYNTH: Dict[str, Any] = {
    "num_classes": 6,
    "dims_image": 16,
    "dims_text": 16,
    "items_per_class": 20,
    "captions_per_class": 5,
    "sigma_image": 0.1,
    "sigma_text": 0.05,
    "alpha": 0.9,
}


def write_synth(out_dir: Path, seed: int = 0, **changes: Any) -> Dict[str, Path]:
    values = {**SMALL_SYNTH, **changes, "seed": seed}
    return write_dataset(generate(SynthConfig(**values)), out_dir)


def pipeline_config(paths: Dict[str, Path], out_dir: Path, **settings: Any) -> PipelineConfig:
    values: Dict[str, Any] = {
        "images": str(paths["images"]),
        "labels": str(paths["labels"]),
        "corpus_text": str(paths["corpus_text"]),
        "corpus_emb": str(paths["corpus_emb"]),
        "out_dir": str(out_dir),
        "dataset": "synthetic",
    }
    values.update({key: value for key, value in settings.items()})
    return config_from_mapping(values)
