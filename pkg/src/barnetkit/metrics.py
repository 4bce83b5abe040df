"""Segmentation evaluation: per-class IoU, Dice, confusion matrix.

Metrics with an empty union are undefined rather than zero; they are
reported as None and excluded from means.  Mean metrics average over
the classes actually present in the ground truth.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError

__all__ = ["EvalReport", "iou", "dice_metric", "confusion",
           "weighted_mean_iou"]


def _check_pair(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(
            f"prediction shape {pred.shape} != truth shape {truth.shape}")
    return pred, truth


def iou(pred, truth, class_id):
    """Intersection over union for one class; None when undefined."""
    pred, truth = _check_pair(pred, truth)
    p = pred == class_id
    t = truth == class_id
    union = int((p | t).sum())
    if union == 0:
        return None
    return float((p & t).sum()) / union


def dice_metric(pred, truth, class_id):
    """2|∩| / (|pred| + |truth|) for one class; None when undefined."""
    pred, truth = _check_pair(pred, truth)
    p = pred == class_id
    t = truth == class_id
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return None
    return 2.0 * float((p & t).sum()) / denom


@dataclass
class EvalReport:
    """Accumulated confusion matrix and the metrics derived from it."""

    matrix: np.ndarray
    per_class_iou: list
    per_class_dice: list
    per_class_accuracy: list
    mean_iou: float
    mean_dice: float

    def to_csv(self):
        lines = ["class,iou,dice,pixel_accuracy,truth_pixels,pred_pixels"]
        truth_px = self.matrix.sum(axis=1)
        pred_px = self.matrix.sum(axis=0)

        def cell(v):
            return "" if v is None else f"{v:.6f}"

        for c in range(self.matrix.shape[0]):
            lines.append(f"{c},{cell(self.per_class_iou[c])},"
                         f"{cell(self.per_class_dice[c])},"
                         f"{cell(self.per_class_accuracy[c])},"
                         f"{truth_px[c]},{pred_px[c]}")
        lines.append(f"mean,{cell(self.mean_iou)},{cell(self.mean_dice)},,,")
        return "\n".join(lines) + "\n"

    def confusion_csv(self):
        """Raw counts plus row-normalized accuracies, side by side."""
        k = self.matrix.shape[0]
        header = ",".join(["truth\\pred"] + [f"count_{c}" for c in range(k)]
                          + [f"frac_{c}" for c in range(k)])
        lines = [header]
        for r in range(k):
            row = self.matrix[r]
            total = row.sum()
            fracs = [f"{v / total:.6f}" if total else "" for v in row]
            lines.append(",".join([str(r)] + [str(v) for v in row] + fracs))
        return "\n".join(lines) + "\n"


def confusion(preds, truths, num_classes):
    """Accumulate a K x K matrix (rows = truth) and derive all metrics."""
    if len(preds) != len(truths):
        raise DimensionError(
            f"{len(preds)} predictions vs {len(truths)} truths")
    k = num_classes
    matrix = np.zeros((k, k), dtype=np.int64)
    for pred, truth in zip(preds, truths):
        pred, truth = _check_pair(pred, truth)
        if pred.size and (int(pred.max()) >= k or int(truth.max()) >= k
                          or int(pred.min()) < 0 or int(truth.min()) < 0):
            raise DataError(f"labels outside [0,{k}) in evaluation input")
        flat = truth.astype(np.int64).ravel() * k + pred.astype(np.int64).ravel()
        matrix += np.bincount(flat, minlength=k * k).reshape(k, k)

    inter = np.diag(matrix).astype(float)
    truth_px = matrix.sum(axis=1).astype(float)
    pred_px = matrix.sum(axis=0).astype(float)
    union = truth_px + pred_px - inter

    per_iou, per_dice, per_acc = [], [], []
    for c in range(k):
        per_iou.append(inter[c] / union[c] if union[c] else None)
        denom = truth_px[c] + pred_px[c]
        per_dice.append(2.0 * inter[c] / denom if denom else None)
        per_acc.append(inter[c] / truth_px[c] if truth_px[c] else None)

    present = [c for c in range(k) if truth_px[c] > 0]
    mean_iou = (float(np.mean([per_iou[c] for c in present]))
                if present else None)
    mean_dice = (float(np.mean([per_dice[c] for c in present]))
                 if present else None)
    return EvalReport(matrix=matrix, per_class_iou=per_iou,
                      per_class_dice=per_dice, per_class_accuracy=per_acc,
                      mean_iou=mean_iou, mean_dice=mean_dice)


def weighted_mean_iou(reports_and_counts):
    """Combine mean IoU across test sets, weighted by sample count."""
    total = sum(count for _, count in reports_and_counts)
    if total == 0:
        raise DataError("no samples to combine")
    return sum(report.mean_iou * count
               for report, count in reports_and_counts) / total
