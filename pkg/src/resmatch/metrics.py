"""Segmentation metrics: confusion counting, macro F1 / mIOU scoring, and
the upsampled-coarse-label oracle prediction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geodata, taxonomy
from .errors import EmptyMatrix, NonIntegralRatio, ShapeMismatch
from .geodata import LabelRaster


def confusion(pred: np.ndarray, truth: np.ndarray, num_classes: int = taxonomy.NUM_CLASSES) -> np.ndarray:
    """C x C counts, rows true / cols predicted; ignored truth pixels skipped."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs truth {truth.shape}")
    valid = truth != taxonomy.IGNORE
    t = truth[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    flat = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    return flat.reshape(num_classes, num_classes)


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    macro_miou: float
    per_class: list = field(default_factory=list)
    pixel_count: int = 0
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "macro_miou": self.macro_miou,
            "per_class": self.per_class,
            "pixel_count": self.pixel_count,
            "config_hash": self.config_hash,
        }


def macro_scores(cm: np.ndarray, include_absent: bool = False, config_hash: str = "") -> EvalReport:
    """Per-class precision/recall/F1/IOU and their unweighted means.

    A class absent from both prediction and truth is excluded from the
    macro means unless ``include_absent`` scores it as zero.
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix has no counted pixels")
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp

    per_class = []
    f1s, ious = [], []
    for c in range(cm.shape[0]):
        support = tp[c] + fp[c] + fn[c]
        if support == 0 and not include_absent:
            per_class.append({"class": c, "precision": None, "recall": None, "f1": None, "iou": None})
            continue
        precision = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] > 0 else 0.0
        recall = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        iou = tp[c] / support if support > 0 else 0.0
        per_class.append(
            {"class": c, "precision": precision, "recall": recall, "f1": f1, "iou": iou}
        )
        f1s.append(f1)
        ious.append(iou)
    return EvalReport(
        accuracy=float(np.trace(cm) / total),
        macro_f1=float(np.mean(f1s)),
        macro_miou=float(np.mean(ious)),
        per_class=per_class,
        pixel_count=int(total),
        config_hash=config_hash,
    )


def oracle_predict(low_label: LabelRaster, target_shape: tuple[int, int]) -> LabelRaster:
    """Nearest-neighbor upsample of the coarse label used directly as the
    prediction (the ceiling of any purely coarse estimator)."""
    h, w = low_label.classes.shape
    th, tw = target_shape
    if th % h or tw % w or th // h != tw // w:
        raise NonIntegralRatio(f"cannot upsample {h}x{w} to {th}x{tw} with one integer factor")
    factor = th // h
    classes = geodata.upsample_label_nearest(low_label.classes, factor)
    return LabelRaster(
        classes=classes, gsd_m=low_label.gsd_m / factor, geo_id=low_label.geo_id
    )


def score_predictions(preds: np.ndarray, truths: np.ndarray, config_hash: str = "") -> EvalReport:
    """Merge per-tile confusion matrices (elementwise sum) and score."""
    cm = np.zeros((taxonomy.NUM_CLASSES, taxonomy.NUM_CLASSES), dtype=np.int64)
    for pred, truth in zip(preds, truths):
        cm += confusion(pred, truth)
    return macro_scores(cm, config_hash=config_hash)
