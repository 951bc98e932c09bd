"""Pipeline orchestration: split, optional head training, retrieval and fusion, clustering, evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from backend.app.config import PipelineConfig
from backend.app.contracts import write_table
from backend.app.discovery import cluster, evaluation
from backend.app.discovery.augment import AugmentedViews, augment_dataset, write_provenance
from backend.app.discovery.embedstore import load_labels, load_matrix, load_split, make_split, save_matrix, save_split
from backend.app.discovery.models import ClusteringResult, DatasetSplit, EmbeddingMatrix, EvalReport
from backend.app.discovery.reprloss import ProjectionHead, apply_head, save_head, train_head
from backend.app.discovery.retrieval import CorpusIndex, load_corpus
from backend.app.error_handlers import GcdError, stage_guard
from backend.app.logging_config import get_logger, log_event, timed_stage
from backend.app.parameter_models import LossConfig, SSKMeansConfig, build_model
from backend.app.provenance import write_resolved_config
from backend.app.report_models import ACCURACY_COLUMNS, TOPK_COLUMNS, AccuracyRow, TopkRow, average_rows
from backend.app.runner import SweepRunner

LOGGER = get_logger("clipgcd.harness")
ROOT_DIR = Path(__file__).resolve().parents[3]

SPLIT_FILE = "split.csv"
HEAD_FILE = "head.emb"
FUSED_FILE = "fused.emb"
PROVENANCE_FILE = "provenance.csv"
PREDICTIONS_FILE = "predictions.csv"
REPORT_FILE = "report.csv"


@dataclass(frozen=True, eq=False)
class PipelineOutcome:
    report: EvalReport
    split: DatasetSplit
    clustering: ClusteringResult
    loss_trace: Tuple[float, ...] = ()
    artifacts: Mapping[str, Path] = field(default_factory=dict)


def _check_label_coverage(images: EmbeddingMatrix, labels: Mapping[str, str]) -> None:
    unlabeled = [item_id for item_id in images.ids if item_id not in labels]
    orphans = [item_id for item_id in labels if not images.has_id(item_id)]
    if unlabeled or orphans:
        raise GcdError(
            code="ID_MISMATCH",
            message=f"images without labels: {unlabeled[:5]}; labels without images: {orphans[:5]}",
        )


def _train(config: PipelineConfig, features: EmbeddingMatrix, split: DatasetSplit) -> Tuple[ProjectionHead, Tuple[float, ...]]:
    loss_config = build_model(
        LossConfig,
        tau=config.tau,
        lambda_=config.lambda_,
        labeled_batch_size=config.labeled_batch_size,
        unlabeled_batch_size=config.unlabeled_batch_size,
        view_noise=config.view_noise,
    )
    trained = train_head(
        features,
        split,
        loss_config,
        epochs=config.epochs,
        lr=config.lr,
        seed=config.train_seed,
        out_dims=config.head_out_dims or None,
        progress=config.progress,
    )
    return trained.head.as_stored(), trained.loss_trace


def run_pipeline(config: PipelineConfig, root_dir: Path = ROOT_DIR) -> PipelineOutcome:
    with stage_guard("config"):
        config.require_inputs()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: Dict[str, Path] = {"config": write_resolved_config(config, out_dir, root_dir)}
    log_event(
        LOGGER,
        logging.INFO,
        "pipeline_config",
        settings=dict(line.split("=", 1) for line in config.to_lines()),
    )

    with stage_guard("load"), timed_stage(LOGGER, "load"):
        images = load_matrix(config.images)  # type: ignore[arg-type]
        labels = load_labels(config.labels)  # type: ignore[arg-type]
        _check_label_coverage(images, labels)

    with stage_guard("split"), timed_stage(LOGGER, "split"):
        if config.split_file is not None:
            split = load_split(config.split_file)
        else:
            split = make_split(labels, config.seen_fraction, config.labeled_fraction, config.split_seed)
        artifacts["split"] = save_split(split, out_dir / SPLIT_FILE)

    index: Optional[CorpusIndex] = None
    if config.text_enabled:
        with stage_guard("retrieval"), timed_stage(LOGGER, "load_corpus"):
            index = load_corpus(config.corpus_text, config.corpus_emb)  # type: ignore[arg-type]

    head: Optional[ProjectionHead] = None
    loss_trace: Tuple[float, ...] = ()
    image_view = images
    if config.train_head and config.head_input == "image":
        with stage_guard("train"), timed_stage(LOGGER, "train", epochs=config.epochs):
            head, loss_trace = _train(config, images, split)
            image_view = apply_head(head, images)

    with stage_guard("augment"), timed_stage(LOGGER, "augment", k=config.k_retrieve, text=config.text_enabled):
        queries = image_view if head is not None and config.query_with_refined else images
        augmented = augment_dataset(
            image_view,
            index,
            config.k_retrieve,
            use_text=config.use_text,
            normalize=config.normalize_views,
            pooling=config.pooling,  # type: ignore[arg-type]
            queries=queries,
        )

    if config.train_head and config.head_input == "fused":
        with stage_guard("train"), timed_stage(LOGGER, "train", epochs=config.epochs):
            head, loss_trace = _train(config, augmented.views, split)
            augmented = AugmentedViews(views=apply_head(head, augmented.views), provenance=augmented.provenance)

    with stage_guard("augment"):
        if head is not None:
            artifacts["head"] = save_head(head, out_dir / HEAD_FILE)
        artifacts["fused"] = save_matrix(augmented.views, out_dir / FUSED_FILE)
        if config.text_enabled:
            artifacts["provenance"] = write_provenance(out_dir / PROVENANCE_FILE, augmented)

    with stage_guard("cluster"), timed_stage(LOGGER, "cluster"):
        cluster_config = build_model(
            SSKMeansConfig,
            k_total=config.k_total or split.num_total_classes,
            max_iters=config.max_iters,
            tolerance=config.tolerance,
            seed=config.cluster_seed,
        )
        clustering = cluster.run(augmented.views, split, cluster_config)
        written = cluster.write_result(clustering, out_dir / PREDICTIONS_FILE)
        artifacts.update(zip(("predictions", "centroids", "trace"), written))

    with stage_guard("eval"), timed_stage(LOGGER, "eval"):
        report = evaluation.subset_report(clustering.assignment, labels, split, per_subset=config.per_subset_matching)
        written = evaluation.write_report(report, out_dir / REPORT_FILE)
        artifacts.update(zip(("report", "permutation"), written))

    log_event(LOGGER, logging.INFO, "pipeline_finished", dataset=config.dataset, summary=report.summary_line())
    return PipelineOutcome(report=report, split=split, clustering=clustering, loss_trace=loss_trace, artifacts=artifacts)


def _report_only(config: PipelineConfig) -> EvalReport:
    return run_pipeline(config).report


def _run_reports(configs: Sequence[PipelineConfig], name: str, workers: int) -> List[EvalReport]:
    runner = SweepRunner(workers)
    reports = runner.run_all(name, [partial(_report_only, config) for config in configs])
    log_event(LOGGER, logging.INFO, "sweep_finished", sweep=name, **runner.snapshot())
    return reports


def sweep_topk(config: PipelineConfig, k_values: Sequence[int], out_path: Optional[Path] = None) -> List[TopkRow]:
    """One run per k (k=0 means image-only) with shared seeds; writes ``k,acc_all,acc_old,acc_new``."""
    if not k_values:
        raise GcdError(code="CONFIG_ERROR", message="k_values must not be empty", stage="sweep")
    if any(int(k) < 0 for k in k_values):
        raise GcdError(code="CONFIG_ERROR", message=f"k_values must be >= 0, got {list(k_values)}", stage="sweep")

    configs = [config.with_updates(k_retrieve=int(k), out_dir=Path(config.out_dir) / f"k{int(k)}") for k in k_values]
    reports = _run_reports(configs, "sweep-topk", config.workers)
    rows = [
        TopkRow(k=int(k), acc_all=report.acc_all, acc_old=report.acc_old, acc_new=report.acc_new)
        for k, report in zip(k_values, reports)
    ]
    write_table(Path(out_path or Path(config.out_dir) / "topk.csv"), TOPK_COLUMNS, (row.cells() for row in rows))
    return rows


def _compare(
    configs: Sequence[PipelineConfig],
    variants: Sequence[Tuple[str, Mapping[str, Any]]],
    name: str,
    out_path: Optional[Path],
) -> List[AccuracyRow]:
    if not configs:
        raise GcdError(code="CONFIG_ERROR", message="at least one dataset config is required", stage=name)
    jobs: List[PipelineConfig] = []
    labels: List[Tuple[str, str]] = []
    for config in configs:
        for position, (variant, changes) in enumerate(variants):
            run_dir = Path(config.out_dir) / name / f"{position:02d}-{variant}"
            jobs.append(config.with_updates(out_dir=run_dir, **changes))
            labels.append((config.dataset, variant))

    reports = _run_reports(jobs, name, max(config.workers for config in configs))
    rows = [AccuracyRow.from_report(dataset, variant, report) for (dataset, variant), report in zip(labels, reports)]
    table = rows + average_rows(rows)
    write_table(
        Path(out_path or Path(configs[0].out_dir) / f"{name}.csv"),
        ACCURACY_COLUMNS,
        (row.cells() for row in table),
    )
    return table


def compare_corpora(
    configs: Sequence[PipelineConfig],
    corpora: Sequence[Tuple[str, Path, Path]],
    out_path: Optional[Path] = None,
) -> List[AccuracyRow]:
    """Same pipeline per (dataset, corpus); ``corpora`` holds (name, caption file, embedding file)."""
    if len(corpora) < 2:
        raise GcdError(code="CONFIG_ERROR", message="compare-corpora needs at least 2 corpora", stage="compare-corpora")
    variants = [
        (corpus_name, {"corpus_text": Path(text_path), "corpus_emb": Path(emb_path), "use_text": True})
        for corpus_name, text_path, emb_path in corpora
    ]
    return _compare(configs, variants, "compare-corpora", out_path)


def compare_knowledge(configs: Sequence[PipelineConfig], out_path: Optional[Path] = None) -> List[AccuracyRow]:
    variants = [("image-only", {"use_text": False}), ("image+text", {"use_text": True})]
    return _compare(configs, variants, "compare-knowledge", out_path)


def compare_finetune(configs: Sequence[PipelineConfig], out_path: Optional[Path] = None) -> List[AccuracyRow]:
    variants = [("raw", {"train_head": False}), ("refined", {"train_head": True})]
    return _compare(configs, variants, "compare-finetune", out_path)
