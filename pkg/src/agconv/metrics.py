"""Classification accuracies and part-segmentation IoU."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autograd import cross_entropy  # noqa: F401  re-exported as the training loss


def accuracy_scores(pred: Sequence[int], true: Sequence[int]) -> tuple[float, float, dict[int, float]]:
    """Overall accuracy, mean per-class accuracy and the per-class table."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"{pred.size} predictions for {true.size} labels")
    if true.size == 0:
        return 0.0, 0.0, {}
    per_class = {int(c): float(np.mean(pred[true == c] == c)) for c in np.unique(true)}
    return float(np.mean(pred == true)), float(np.mean(list(per_class.values()))), per_class


def part_iou(pred: Sequence[int], true: Sequence[int], parts: int | Sequence[int]) -> tuple[dict[int, float], float]:
    """Per-part IoU and their mean over the shape's declared parts.

    A part absent from both prediction and truth scores 1.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError("prediction and truth lengths differ")
    part_ids = range(parts) if isinstance(parts, (int, np.integer)) else parts
    ious = {}
    for p in part_ids:
        inter = np.sum((pred == p) & (true == p))
        union = np.sum((pred == p) | (true == p))
        ious[int(p)] = 1.0 if union == 0 else float(inter / union)
    return ious, float(np.mean(list(ious.values())))


def compute_iou(pred, true, parts):
    """Alias of :func:`part_iou` returning ``(per-part IoU, shape IoU)``."""
    return part_iou(pred, true, parts)


def instance_and_class_miou(shape_ious: Sequence[float], categories: Sequence[int]) -> tuple[float, float]:
    """Mean IoU over instances and over category means."""
    if not shape_ious:
        return 0.0, 0.0
    by_cat = defaultdict(list)
    for iou, cat in zip(shape_ious, categories):
        by_cat[cat].append(iou)
    return float(np.mean(shape_ious)), float(np.mean([np.mean(v) for v in by_cat.values()]))


@dataclass
class MetricsReport:
    oa: float = 0.0
    macc: float = 0.0
    miou: float | None = None
    mciou: float | None = None
    per_class: dict = field(default_factory=dict)
    loss_curve: list = field(default_factory=list)
    history: list = field(default_factory=list)

    CSV_HEADER = "epoch,split,loss,oa,macc,miou,mciou"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for row in self.history:
            lines.append(",".join(_fmt(row.get(k)) for k in self.CSV_HEADER.split(",")))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)
