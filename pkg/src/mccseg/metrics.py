"""Confusion-matrix based mIoU."""
from dataclasses import dataclass

import numpy as np

from .pseudo import IGNORE

__all__ = ["MiouReport", "confusion_matrix", "miou"]


@dataclass
class MiouReport:
    iou: np.ndarray  # (C+1,), nan where the union is empty
    mean: float
    confusion: np.ndarray  # (C+1, C+1), rows = ground truth
    unassigned: np.ndarray  # (C+1,), gt pixels predicted as 255

    def as_dict(self):
        return {"miou": self.mean, "iou": [None if np.isnan(v) else float(v) for v in self.iou]}


def confusion_matrix(pred, gt, n_classes):
    """Counts ``(gt, pred)`` pairs; 255 predictions are tallied separately."""
    pred = np.asarray(pred).ravel().astype(np.int64)
    gt = np.asarray(gt).ravel().astype(np.int64)
    valid = gt != IGNORE
    pred, gt = pred[valid], gt[valid]
    unsure = pred == IGNORE
    unassigned = np.bincount(gt[unsure], minlength=n_classes)[:n_classes]
    idx = n_classes * gt[~unsure] + pred[~unsure]
    conf = np.bincount(idx, minlength=n_classes ** 2).reshape(n_classes, n_classes)
    return conf, unassigned


def miou(pred, gt, n_classes):
    """mIoU of integer label maps over ``n_classes`` (background included).

    Pixels predicted as 255 count as misses for their ground-truth class.
    """
    conf, unassigned = confusion_matrix(pred, gt, n_classes)
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp + unassigned
    union = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / np.where(union > 0, union, 1), np.nan)
    mean = float(np.nanmean(iou)) if np.any(union > 0) else float("nan")
    return MiouReport(iou=iou, mean=mean, confusion=conf, unassigned=unassigned)
