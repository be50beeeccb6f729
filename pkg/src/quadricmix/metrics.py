"""IoU / mIoU evaluation of label grids."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionMatrix:
    """``counts[g, p]``: voxels with ground truth ``g`` predicted as ``p``.  Class 0 is empty."""

    counts: np.ndarray

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())


def confusion(pred, gt, n_classes=None):
    if pred.spec != gt.spec:
        raise ValueError("prediction and ground truth grids have different specs")
    if n_classes is None:
        n_classes = max(pred.class_count, gt.class_count) + 1
    p = pred.labels.astype(np.int64)
    g = gt.labels.astype(np.int64)
    counts = np.bincount(g * n_classes + p, minlength=n_classes * n_classes)
    return ConfusionMatrix(counts.reshape(n_classes, n_classes).astype(np.int64))


def per_class_iou(cm: ConfusionMatrix):
    """IoU of every class (index 0 is empty); NaN where TP+FP+FN = 0."""
    c = cm.counts
    tp = np.diag(c).astype(np.float64)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    union = tp + fp + fn
    iou = np.full(len(tp), np.nan)
    np.divide(tp, union, out=iou, where=union > 0)
    return iou


def miou(cm: ConfusionMatrix):
    """Mean IoU over non-empty classes that occur in prediction or ground truth.

    Returns ``(miou, per_class)`` where ``per_class`` excludes the empty class.
    """
    iou = per_class_iou(cm)[1:]
    valid = ~np.isnan(iou)
    # correctly rounded sum, so the result does not depend on summation order
    value = math.fsum(iou[valid].tolist()) / valid.sum() if valid.any() else float("nan")
    return value, iou


def iou_binary(cm: ConfusionMatrix):
    """Occupied-vs-empty IoU, ignoring semantics."""
    c = cm.counts
    tp = c[1:, 1:].sum()
    fp = c[0, 1:].sum()
    fn = c[1:, 0].sum()
    union = tp + fp + fn
    return float(tp / union) if union else float("nan")


def evaluate(pred, gt):
    """Dict with ``iou``, ``miou`` and ``per_class_iou`` for two label grids."""
    cm = confusion(pred, gt)
    m, per_class = miou(cm)
    return {"iou": iou_binary(cm), "miou": m, "per_class_iou": per_class}
