from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Optional

from backend.app.contracts import write_table
from backend.app.discovery import cluster, evaluation, synth
from backend.app.discovery.augment import augment_dataset, write_provenance
from backend.app.discovery.embedstore import load_labels, load_matrix, load_split, make_split, save_matrix, save_split
from backend.app.discovery.reprloss import load_head, save_head, train_head
from backend.app.discovery.retrieval import CorpusIndex, batch_query, load_corpus, load_index, save_index, write_hits
from backend.app.error_handlers import GcdError
from backend.app.logging_config import get_logger, log_event
from backend.app.parameter_models import LossConfig, SSKMeansConfig, SynthConfig, build_model

LOGGER = get_logger("clipgcd.commands")


def _corpus_from_args(args: argparse.Namespace) -> CorpusIndex:
    if args.index:
        return load_index(Path(args.index))
    if args.corpus_text and args.corpus_emb:
        return load_corpus(Path(args.corpus_text), Path(args.corpus_emb))
    raise GcdError(code="CONFIG_ERROR", message="pass --index, or both --corpus-text and --corpus-emb")


def _add_corpus_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--index", help="saved corpus index (EMB1 path; captions at <path>.txt)")
    parser.add_argument("--corpus-text", help="caption file, one caption per line")
    parser.add_argument("--corpus-emb", help="EMB1 caption embeddings aligned with --corpus-text")


def handle_synth(args: argparse.Namespace) -> None:
    config = build_model(
        SynthConfig,
        num_classes=args.classes,
        dims_image=args.dims_image,
        dims_text=args.dims_text,
        items_per_class=args.per_class,
        captions_per_class=args.captions_per_class,
        sigma_image=args.sigma_image,
        sigma_text=args.sigma_text,
        alpha=args.alpha,
        seed=args.seed,
    )
    written = synth.write_dataset(synth.generate(config), Path(args.out_dir))
    log_event(LOGGER, logging.INFO, "synth_written", **{name: str(path) for name, path in written.items()})


def handle_split(args: argparse.Namespace) -> None:
    split = make_split(load_labels(Path(args.labels)), args.seen_fraction, args.labeled_fraction, args.seed)
    save_split(split, Path(args.out))
    print(
        f"seen={split.num_seen_classes} total={split.num_total_classes} "
        f"labeled={len(split.labeled)} unlabeled={len(split.unlabeled)}"
    )


def handle_index(args: argparse.Namespace) -> None:
    index = load_corpus(Path(args.corpus_text), Path(args.corpus_emb))
    save_index(index, Path(args.out))
    log_event(LOGGER, logging.INFO, "index_written", rows=index.size, dims=index.dims, path=args.out)


def handle_retrieve(args: argparse.Namespace) -> None:
    index = _corpus_from_args(args)
    queries = load_matrix(Path(args.queries))
    write_hits(Path(args.out), queries.ids, batch_query(index, queries, args.k))


def handle_augment(args: argparse.Namespace) -> None:
    use_text = not args.no_text and args.k > 0
    index: Optional[CorpusIndex] = _corpus_from_args(args) if use_text else None
    augmented = augment_dataset(
        load_matrix(Path(args.images)),
        index,
        args.k,
        use_text=use_text,
        normalize=not args.no_normalize,
        pooling=args.pooling,
        projection=load_head(Path(args.head)) if args.head else None,
    )
    out = save_matrix(augmented.views, Path(args.out))
    if use_text:
        write_provenance(Path(args.provenance or f"{out.with_suffix('')}.provenance.csv"), augmented)


def handle_train_head(args: argparse.Namespace) -> None:
    loss_config = build_model(
        LossConfig,
        tau=args.tau,
        lambda_=args.lambda_,
        labeled_batch_size=args.labeled_batch_size,
        unlabeled_batch_size=args.unlabeled_batch_size,
        view_noise=args.view_noise,
    )
    result = train_head(
        load_matrix(Path(args.images)),
        load_split(Path(args.split)),
        loss_config,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        out_dims=args.out_dims or None,
        progress=args.progress,
    )
    out = save_head(result.head, Path(args.out))
    write_table(
        Path(f"{out.with_suffix('')}.loss.csv"),
        ["epoch", "loss"],
        ([epoch, repr(loss)] for epoch, loss in enumerate(result.loss_trace)),
    )


def handle_cluster(args: argparse.Namespace) -> None:
    config = build_model(
        SSKMeansConfig,
        k_total=args.k,
        max_iters=args.max_iters,
        tolerance=args.tol,
        seed=args.seed,
    )
    result = cluster.run(load_matrix(Path(args.features)), load_split(Path(args.split)), config)
    cluster.write_result(result, Path(args.out))


def handle_eval(args: argparse.Namespace) -> None:
    report = evaluation.subset_report(
        cluster.load_predictions(Path(args.pred)),
        load_labels(Path(args.truth)),
        load_split(Path(args.split)),
        per_subset=args.per_subset,
    )
    evaluation.write_report(report, Path(args.out))
    print(report.summary_line())


def register_module_commands(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("synth", help="generate a synthetic aligned image/caption dataset")
    parser.add_argument("--classes", type=int, required=True)
    parser.add_argument("--dims-image", type=int, required=True)
    parser.add_argument("--dims-text", type=int, required=True)
    parser.add_argument("--per-class", type=int, required=True)
    parser.add_argument("--captions-per-class", type=int, default=20)
    parser.add_argument("--sigma-image", type=float, default=0.3)
    parser.add_argument("--sigma-text", type=float, default=0.1)
    parser.add_argument("--alpha", type=float, default=0.9)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", required=True)
    parser.set_defaults(handler=handle_synth, stage="synth")

    parser = subparsers.add_parser("split", help="build the labeled/unlabeled split from a labels file")
    parser.add_argument("--labels", required=True)
    parser.add_argument("--seen-fraction", type=float, default=0.5)
    parser.add_argument("--labeled-fraction", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    parser.set_defaults(handler=handle_split, stage="split")

    parser = subparsers.add_parser("index", help="normalize and persist a caption corpus")
    parser.add_argument("--corpus-text", required=True)
    parser.add_argument("--corpus-emb", required=True)
    parser.add_argument("--out", required=True)
    parser.set_defaults(handler=handle_index, stage="retrieval")

    parser = subparsers.add_parser("retrieve", help="top-k captions for each query embedding")
    _add_corpus_flags(parser)
    parser.add_argument("--queries", required=True)
    parser.add_argument("--k", type=int, default=4)
    parser.add_argument("--out", required=True)
    parser.set_defaults(handler=handle_retrieve, stage="retrieval")

    parser = subparsers.add_parser("augment", help="fuse image embeddings with pooled retrieved captions")
    _add_corpus_flags(parser)
    parser.add_argument("--images", required=True)
    parser.add_argument("--k", type=int, default=4)
    parser.add_argument("--no-text", action="store_true")
    parser.add_argument("--no-normalize", action="store_true")
    parser.add_argument("--pooling", choices=("mean", "max"), default="mean")
    parser.add_argument("--head", help="projection head applied to the fused views")
    parser.add_argument("--provenance", help="CSV of retrieved corpus rows per image (default <out stem>.provenance.csv)")
    parser.add_argument("--out", required=True)
    parser.set_defaults(handler=handle_augment, stage="augment")

    parser = subparsers.add_parser("train-head", help="train the projection head with the combined contrastive loss")
    parser.add_argument("--images", required=True)
    parser.add_argument("--split", required=True)
    parser.add_argument("--tau", type=float, default=0.07)
    parser.add_argument("--lambda", dest="lambda_", type=float, default=0.25)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--lr", type=float, default=5e-5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--view-noise", type=float, default=0.05)
    parser.add_argument(
        "--labeled-batch-size", type=int, default=64, help="labeled rows per step; with the unlabeled default a 128-row batch"
    )
    parser.add_argument(
        "--unlabeled-batch-size", type=int, default=64, help="unlabeled rows per step; with the labeled default a 128-row batch"
    )
    parser.add_argument("--out-dims", type=int, default=0)
    parser.add_argument("--progress", action="store_true")
    parser.add_argument("--out", required=True)
    parser.set_defaults(handler=handle_train_head, stage="train")

    parser = subparsers.add_parser("cluster", help="semi-supervised k-means over fused features")
    parser.add_argument("--features", required=True)
    parser.add_argument("--split", required=True)
    parser.add_argument("--k", type=int, required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-iters", type=int, default=200)
    parser.add_argument("--tol", type=float, default=1e-6)
    parser.add_argument("--out", required=True)
    parser.set_defaults(handler=handle_cluster, stage="cluster")

    parser = subparsers.add_parser("eval", help="Hungarian-matched accuracy on All/Old/New")
    parser.add_argument("--pred", required=True)
    parser.add_argument("--truth", required=True)
    parser.add_argument("--split", required=True)
    parser.add_argument("--per-subset", action="store_true")
    parser.add_argument("--out", required=True)
    parser.set_defaults(handler=handle_eval, stage="eval")
