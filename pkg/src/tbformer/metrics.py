"""Pixel-level localization metrics.

Threshold metrics binarize the forged-class probability at 0.5 (``>=`` is
positive). AUC is the Mann-Whitney rank statistic, which counts ties as
half a win.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

THRESHOLD = 0.5
FIELDS = ("precision", "recall", "f1", "iou", "auc")


def _check_gt(gt) -> np.ndarray:
    g = np.asarray(gt)
    if not np.isin(g, (0, 1)).all():
        raise ValueError("ground truth must be binary (0/1)")
    return g.astype(bool)


def confusion(pred_prob, gt, threshold: float = THRESHOLD) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) of the forged class."""
    g = _check_gt(gt)
    p = np.asarray(pred_prob) >= threshold
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    return tp, fp, fn, int(p.size - tp - fp - fn)


def binary_metrics(pred_prob, gt, threshold: float = THRESHOLD) -> tuple[float, float, float, float]:
    """(precision, recall, f1, iou). Empty ground truth with an empty prediction scores 1."""
    tp, fp, fn, _ = confusion(pred_prob, gt, threshold)
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0, 1.0

    def ratio(num: int, den: int) -> float:
        return num / den if den else 0.0

    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)
    f1 = ratio(2 * tp, 2 * tp + fp + fn)
    iou = ratio(tp, tp + fp + fn)
    return precision, recall, f1, iou


def auc(pred_prob, gt) -> float | None:
    """Pixel ROC AUC, or ``None`` when ``gt`` holds a single class."""
    g = _check_gt(gt).reshape(-1)
    s = np.asarray(pred_prob, dtype=np.float64).reshape(-1)
    n_pos = int(g.sum())
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    u = ranks[g].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class ImageRecord:
    name: str
    precision: float
    recall: float
    f1: float
    iou: float
    auc: float | None

    def row(self) -> list[str]:
        return [self.name] + [_fmt(getattr(self, k)) for k in FIELDS]


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.6f}"


def evaluate_image(name: str, pred_prob, gt, threshold: float = THRESHOLD) -> ImageRecord:
    return ImageRecord(name, *binary_metrics(pred_prob, gt, threshold), auc(pred_prob, gt))


@dataclass
class MetricsReport:
    records: list[ImageRecord]
    aggregate: dict[str, float | None] = field(default_factory=dict)
    auc_skipped: int = 0
    mode: str = "per_image"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("image",) + FIELDS)
        for r in self.records:
            w.writerow(r.row())
        w.writerow(["mean"] + [_fmt(self.aggregate.get(k)) for k in FIELDS])
        return buf.getvalue()

    def summary(self) -> str:
        parts = [f"{k}={_fmt(self.aggregate.get(k)) or 'n/a'}" for k in FIELDS]
        tail = f" ({self.auc_skipped} image(s) without AUC)" if self.auc_skipped else ""
        return f"{len(self.records)} images [{self.mode}]: " + " ".join(parts) + tail


def aggregate(records: Sequence[ImageRecord]) -> MetricsReport:
    """Unweighted per-image means; images whose AUC is undefined are excluded from the AUC mean."""
    if not records:
        raise ValueError("aggregate: no images")
    agg: dict[str, float | None] = {}
    for k in ("precision", "recall", "f1", "iou"):
        agg[k] = float(np.mean([getattr(r, k) for r in records]))
    aucs = [r.auc for r in records if r.auc is not None]
    agg["auc"] = float(np.mean(aucs)) if aucs else None
    return MetricsReport(list(records), agg, len(records) - len(aucs))


def pooled(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], threshold: float = THRESHOLD) -> MetricsReport:
    """Metrics over all pixels of all images treated as one population."""
    if not preds:
        raise ValueError("pooled: no images")
    p = np.concatenate([np.asarray(x).reshape(-1) for x in preds])
    g = np.concatenate([np.asarray(x).reshape(-1) for x in gts])
    rec = evaluate_image("pooled", p, g, threshold)
    agg = {k: getattr(rec, k) for k in FIELDS}
    return MetricsReport([rec], agg, int(rec.auc is None), mode="pooled")


def pixel_accuracy(pred_prob, gt, threshold: float = THRESHOLD) -> float:
    tp, fp, fn, tn = confusion(pred_prob, gt, threshold)
    return (tp + tn) / (tp + fp + fn + tn)


