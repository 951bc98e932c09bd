from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence

from backend.app.error_handlers import GcdError


@dataclass(frozen=True)
class FileContract:
    name: str
    columns: tuple[str, ...]


FILE_CONTRACTS: Dict[str, FileContract] = {
    "labels": FileContract("labels", ("id", "class_name")),
    "split": FileContract("split", ("id", "class_name", "is_labeled")),
    "predictions": FileContract("predictions", ("id", "cluster")),
    "corpus_classes": FileContract("corpus_classes", ("corpus_row", "class_name")),
}


def _validate_header(contract: FileContract, header: Sequence[str], path: Path) -> List[str]:
    cleaned = [column.strip() for column in header]
    if cleaned[: len(contract.columns)] != list(contract.columns):
        raise GcdError(
            code="BAD_HEADER",
            message=f"{path}: expected {contract.name} header {','.join(contract.columns)}, got {','.join(cleaned)}",
        )
    return cleaned


def read_contract_rows(path: Path, name: str) -> Iterator[Dict[str, str]]:
    contract = FILE_CONTRACTS[name]
    path = Path(path)
    if not path.is_file():
        raise GcdError(code="CONFIG_ERROR", message=f"{contract.name} file not found: {path}")

    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise GcdError(code="BAD_HEADER", message=f"{path}: empty {contract.name} file")
        columns = _validate_header(contract, header, path)

        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise GcdError(
                    code="BAD_HEADER",
                    message=f"{path}:{line_no}: expected {len(columns)} fields, got {len(row)}",
                )
            yield {column: value.strip() for column, value in zip(columns, row)}


def write_contract_rows(path: Path, name: str, rows: Iterable[Sequence[object]]) -> Path:
    contract = FILE_CONTRACTS[name]
    return write_table(path, contract.columns, rows)


def write_table(path: Path, columns: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(list(columns))
        for row in rows:
            writer.writerow(list(row))
    return path
