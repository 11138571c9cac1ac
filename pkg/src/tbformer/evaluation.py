"""Dataset evaluation and the distortion robustness report."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .config import ModelConfig
from .data.distort import Distortion, distort, resize_to
from .metrics import MetricsReport, aggregate, evaluate_image, pooled
from .model import predict

BASELINE_LABEL = "no distortion"


def prepare_input(image: np.ndarray, cfg: ModelConfig, spec: Distortion | None = None) -> np.ndarray:
    """Apply ``spec`` and bring the result to the model's input size."""
    img = image if spec is None else distort(image, spec)
    if img.shape[1:] != (cfg.H, cfg.W):
        img = resize_to(img, cfg.H, cfg.W)
    return img


def evaluate(
    params: Mapping[str, np.ndarray],
    cfg: ModelConfig,
    data: Sequence[tuple[str, np.ndarray, np.ndarray]],
    spec: Distortion | None = None,
    mode: str = "per_image",
    gt_as_prediction: bool = False,
) -> MetricsReport:
    """Metrics over ``(name, image, mask)`` triples, optionally distorting inputs first.

    Ground-truth masks stay at full resolution; predictions are resized to the
    mask size when the model input differs. ``gt_as_prediction`` scores the
    masks against themselves, which is a harness self-check.
    """
    if mode not in ("per_image", "pooled"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    preds, gts, records = [], [], []
    for name, image, mask in data:
        if gt_as_prediction:
            prob = np.asarray(mask, dtype=np.float64)
        else:
            prob = predict(prepare_input(image, cfg, spec), params, cfg)
            if prob.shape != mask.shape:
                prob = resize_to(prob[None], *mask.shape)[0]
        preds.append(prob)
        gts.append(mask)
        records.append(evaluate_image(name, prob, mask))
    return pooled(preds, gts) if mode == "pooled" else aggregate(records)


@dataclass
class RobustnessRow:
    label: str
    auc: float | None
    delta: float | None
    report: MetricsReport


def robustness_table(
    params: Mapping[str, np.ndarray],
    cfg: ModelConfig,
    data,
    specs: Sequence[Distortion],
    mode: str = "per_image",
    gt_as_prediction: bool = False,
) -> list[RobustnessRow]:
    """Undistorted baseline first, then one row per distortion with its signed AUC change."""
    base = evaluate(params, cfg, data, None, mode, gt_as_prediction)
    base_auc = base.aggregate.get("auc")
    rows = [RobustnessRow(BASELINE_LABEL, base_auc, None, base)]
    for spec in specs:
        rep = evaluate(params, cfg, data, spec, mode, gt_as_prediction)
        a = rep.aggregate.get("auc")
        delta = None if a is None or base_auc is None else a - base_auc
        rows.append(RobustnessRow(spec.label, a, delta, rep))
    return rows


def robustness_csv(rows: Sequence[RobustnessRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("distortion", "auc", "auc_delta", "f1", "iou"))
    for r in rows:
        agg = r.report.aggregate
        w.writerow(
            (
                r.label,
                "" if r.auc is None else f"{r.auc:.6f}",
                "" if r.delta is None else f"{r.delta:+.6f}",
                f"{agg['f1']:.6f}",
                f"{agg['iou']:.6f}",
            )
        )
    return buf.getvalue()


def format_robustness(rows: Sequence[RobustnessRow]) -> str:
    lines = [f"{'Distortion':<24}{'AUC':>9}{'delta':>10}"]
    for r in rows:
        auc = "n/a" if r.auc is None else f"{r.auc:.3f}"
        delta = "" if r.delta is None else f"{r.delta:+.3f}"
        lines.append(f"{r.label:<24}{auc:>9}{delta:>10}")
    return "\n".join(lines)
