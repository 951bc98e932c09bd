from __future__ import annotations

import argparse
from pathlib import Path
from typing import Dict, List, Tuple

from backend.app.config import PipelineConfig, load_pipeline_config, parse_overrides
from backend.app.error_handlers import GcdError
from backend.app.report_models import AccuracyRow
from backend.app.services import harness


def _overrides(args: argparse.Namespace) -> Dict[str, str]:
    overrides = parse_overrides(args.set)
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    if args.workers:
        overrides["workers"] = str(args.workers)
    if args.progress:
        overrides["progress"] = "true"
    return overrides


def _configs(args: argparse.Namespace) -> List[PipelineConfig]:
    overrides = _overrides(args)
    paths = args.config or [None]
    return [
        load_pipeline_config(Path(path) if path else None, overrides, root_dir=harness.ROOT_DIR)
        for path in paths
    ]


def _print_table(rows: List[AccuracyRow]) -> None:
    for row in rows:
        print(",".join(row.cells()))


def _parse_corpus(value: str) -> Tuple[str, Path, Path]:
    name, sep, paths = value.partition("=")
    text_path, comma, emb_path = paths.partition(",")
    if not sep or not comma or not name.strip():
        raise GcdError(code="CONFIG_ERROR", message=f"corpus {value!r} is not NAME=CAPTIONS,EMBEDDINGS")
    return name.strip(), Path(text_path.strip()), Path(emb_path.strip())


def handle_run(args: argparse.Namespace) -> None:
    outcome = harness.run_pipeline(_configs(args)[0])
    print(outcome.report.summary_line())


def handle_sweep_topk(args: argparse.Namespace) -> None:
    rows = harness.sweep_topk(_configs(args)[0], args.k, Path(args.out) if args.out else None)
    for row in rows:
        print(",".join(row.cells()))


def handle_compare_corpora(args: argparse.Namespace) -> None:
    corpora = [_parse_corpus(value) for value in args.corpus]
    _print_table(harness.compare_corpora(_configs(args), corpora, Path(args.out) if args.out else None))


def handle_compare_knowledge(args: argparse.Namespace) -> None:
    _print_table(harness.compare_knowledge(_configs(args), Path(args.out) if args.out else None))


def handle_compare_finetune(args: argparse.Namespace) -> None:
    _print_table(harness.compare_finetune(_configs(args), Path(args.out) if args.out else None))


def _add_config_flags(parser: argparse.ArgumentParser, config_help: str) -> None:
    parser.add_argument("--config", action="append", help=config_help)
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting; repeatable")
    parser.add_argument("--out-dir")
    parser.add_argument("--workers", type=int, default=0)
    parser.add_argument("--progress", action="store_true")


def register_pipeline_commands(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("run", help="run split, retrieval, fusion, clustering and evaluation")
    _add_config_flags(parser, "pipeline config file (key=value, .json or .yaml)")
    parser.set_defaults(handler=handle_run, stage="run")

    parser = subparsers.add_parser("sweep-topk", help="accuracy as a function of the number of retrieved captions")
    _add_config_flags(parser, "pipeline config file (key=value, .json or .yaml)")
    parser.add_argument("--k", type=int, nargs="+", required=True)
    parser.add_argument("--out")
    parser.set_defaults(handler=handle_sweep_topk, stage="sweep")

    parser = subparsers.add_parser("compare-corpora", help="same pipeline against several caption corpora")
    _add_config_flags(parser, "pipeline config file; repeat once per dataset")
    parser.add_argument("--corpus", action="append", required=True, metavar="NAME=CAPTIONS,EMBEDDINGS")
    parser.add_argument("--out")
    parser.set_defaults(handler=handle_compare_corpora, stage="compare-corpora")

    parser = subparsers.add_parser("compare-knowledge", help="image-only versus image+text clustering")
    _add_config_flags(parser, "pipeline config file; repeat once per dataset")
    parser.add_argument("--out")
    parser.set_defaults(handler=handle_compare_knowledge, stage="compare-knowledge")

    parser = subparsers.add_parser("compare-finetune", help="raw versus head-refined representation")
    _add_config_flags(parser, "pipeline config file; repeat once per dataset")
    parser.add_argument("--out")
    parser.set_defaults(handler=handle_compare_finetune, stage="compare-finetune")
