"""Confusion-matrix bookkeeping and intersection-over-union."""
from __future__ import annotations

import csv
import io
from fractions import Fraction

import numpy as np

from .errors import EmptyInputError


class ConfusionMatrix:
    """Counts with rows = ground truth, columns = prediction.

    Points labelled ``ignore_index`` are not counted. The ignore class is
    also left out of the mean IoU, as is any class with an empty
    denominator (never seen and never predicted).
    """

    def __init__(self, num_classes: int, ignore_index: int | None = None):
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, predictions, labels) -> "ConfusionMatrix":
        predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if predictions.shape != labels.shape:
            raise ValueError(f"{len(predictions)} predictions for {len(labels)} labels")
        keep = labels != self.ignore_index if self.ignore_index is not None else slice(None)
        predictions, labels = predictions[keep], labels[keep]
        n = self.num_classes
        if len(labels) and (labels.min() < 0 or labels.max() >= n
                            or predictions.min() < 0 or predictions.max() >= n):
            raise ValueError(f"class ids must lie in [0, {n})")
        self.counts += np.bincount(labels * n + predictions, minlength=n * n).reshape(n, n)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.num_classes, self.ignore_index)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _scored_classes(self):
        return [c for c in range(self.num_classes) if c != self.ignore_index]

    def tp_fp_fn(self):
        tp = np.diag(self.counts)
        return tp, self.counts.sum(axis=0) - tp, self.counts.sum(axis=1) - tp

    def iou(self) -> np.ndarray:
        """Per-class IoU; NaN for the ignore class and for unseen classes."""
        if self.total == 0:
            raise EmptyInputError("confusion matrix is empty")
        tp, fp, fn = self.tp_fp_fn()
        denom = tp + fp + fn
        out = np.full(self.num_classes, np.nan)
        for c in self._scored_classes():
            if denom[c]:
                out[c] = tp[c] / denom[c]
        return out

    def miou(self) -> float:
        """Mean IoU over scored classes, averaged in exact rational arithmetic."""
        if self.total == 0:
            raise EmptyInputError("confusion matrix is empty")
        tp, fp, fn = self.tp_fp_fn()
        terms = [Fraction(int(tp[c]), int(tp[c] + fp[c] + fn[c]))
                 for c in self._scored_classes() if tp[c] + fp[c] + fn[c]]
        return float(sum(terms, Fraction(0)) / len(terms))

    def to_csv(self, class_names=None) -> str:
        names = class_names or [str(c) for c in range(self.num_classes)]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "iou"])
        for c, v in enumerate(self.iou()):
            if c == self.ignore_index:
                continue
            writer.writerow([names[c], "" if np.isnan(v) else f"{v:.6f}"])
        writer.writerow(["mIoU", f"{self.miou():.6f}"])
        return buf.getvalue()

    def table(self, class_names=None) -> str:
        names = class_names or [str(c) for c in range(self.num_classes)]
        width = max(len(n) for n in names + ["mIoU"])
        lines = []
        for c, v in enumerate(self.iou()):
            if c == self.ignore_index:
                continue
            shown = "   n/a" if np.isnan(v) else f"{100 * v:6.2f}"
            lines.append(f"{names[c]:<{width}}  {shown}")
        lines.append(f"{'mIoU':<{width}}  {100 * self.miou():6.2f}")
        return "\n".join(lines)


def miou(cm: ConfusionMatrix) -> tuple[np.ndarray, float]:
    return cm.iou(), cm.miou()
