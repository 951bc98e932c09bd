from __future__ import annotations

from typing import Dict, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field

from backend.app.discovery.models import EvalReport, format_percent

ACCURACY_COLUMNS = ("dataset", "variant", "acc_all", "acc_old", "acc_new")
TOPK_COLUMNS = ("k", "acc_all", "acc_old", "acc_new")
AVERAGE_LABEL = "Average"


class AccuracyRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    dataset: str
    variant: str
    acc_all: float = Field(ge=0, le=1)
    acc_old: Optional[float] = Field(default=None, ge=0, le=1)
    acc_new: Optional[float] = Field(default=None, ge=0, le=1)

    @classmethod
    def from_report(cls, dataset: str, variant: str, report: EvalReport) -> "AccuracyRow":
        return cls(dataset=dataset, variant=variant, acc_all=report.acc_all, acc_old=report.acc_old, acc_new=report.acc_new)

    def cells(self) -> List[str]:
        return [self.dataset, self.variant, *(format_percent(value) for value in (self.acc_all, self.acc_old, self.acc_new))]


class TopkRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int = Field(ge=0)
    acc_all: float = Field(ge=0, le=1)
    acc_old: Optional[float] = Field(default=None, ge=0, le=1)
    acc_new: Optional[float] = Field(default=None, ge=0, le=1)

    def cells(self) -> List[str]:
        return [str(self.k), *(format_percent(value) for value in (self.acc_all, self.acc_old, self.acc_new))]


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [value for value in values if value is not None]
    if not present:
        return None
    return sum(present) / len(present)


def average_rows(rows: Sequence[AccuracyRow]) -> List[AccuracyRow]:
    """One ``Average`` row per variant (first-seen order), arithmetic mean across datasets."""
    grouped: Dict[str, List[AccuracyRow]] = {}
    for row in rows:
        grouped.setdefault(row.variant, []).append(row)
    averages = []
    for variant, members in grouped.items():
        averages.append(
            AccuracyRow(
                dataset=AVERAGE_LABEL,
                variant=variant,
                acc_all=_mean([row.acc_all for row in members]),  # type: ignore[arg-type]
                acc_old=_mean([row.acc_old for row in members]),
                acc_new=_mean([row.acc_new for row in members]),
            )
        )
    return averages
