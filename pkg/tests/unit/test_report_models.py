import numpy as np
import pytest
from pydantic import ValidationError

from backend.app.discovery.models import EvalReport
from backend.app.report_models import AVERAGE_LABEL, AccuracyRow, TopkRow, average_rows


def _report(acc_all: float, acc_old, acc_new) -> EvalReport:
    return EvalReport(
        acc_all=acc_all,
        acc_old=acc_old,
        acc_new=acc_new,
        permutation={},
        contingency=np.zeros((1, 1)),
        cluster_labels=(0,),
        class_labels=("a",),
        num_items=1,
    )


def test_rows_render_percentages_with_dash_for_missing_subsets() -> None:
    row = AccuracyRow.from_report("cifar10", "image+text", _report(0.966, 0.972, None))

    assert row.cells() == ["cifar10", "image+text", "96.6", "97.2", "-"]
    assert TopkRow(k=4, acc_all=0.5, acc_old=1.0, acc_new=0.25).cells() == ["4", "50.0", "100.0", "25.0"]


def test_average_rows_group_by_variant_in_first_seen_order() -> None:
    rows = [
        AccuracyRow(dataset="a", variant="image-only", acc_all=0.5, acc_old=0.6, acc_new=0.4),
        AccuracyRow(dataset="a", variant="image+text", acc_all=0.7, acc_old=0.8, acc_new=None),
        AccuracyRow(dataset="b", variant="image-only", acc_all=0.3, acc_old=0.2, acc_new=0.6),
        AccuracyRow(dataset="b", variant="image+text", acc_all=0.9, acc_old=1.0, acc_new=0.5),
    ]

    averages = average_rows(rows)

    assert [(row.dataset, row.variant) for row in averages] == [(AVERAGE_LABEL, "image-only"), (AVERAGE_LABEL, "image+text")]
    assert averages[0].acc_all == pytest.approx(0.4)
    assert averages[0].acc_old == pytest.approx(0.4)
    assert averages[0].acc_new == pytest.approx(0.5)
    assert averages[1].acc_new == pytest.approx(0.5)


def test_rows_reject_ratios_outside_unit_interval() -> None:
    with pytest.raises(ValidationError):
        AccuracyRow(dataset="a", variant="v", acc_all=1.5)
    with pytest.raises(ValidationError):
        TopkRow(k=-1, acc_all=0.5)
