"""TP/FP labelling, FROC curves, sensitivity at fixed false positives per image, NMS."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import pairwise_iou

FPPI_TARGETS = (0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class FrocPoint:
    threshold: float
    fppi: float
    sensitivity: float


def _score_order(scores) -> np.ndarray:
    # stable: equal scores keep their input order
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def match_tp_fp(boxes, scores, gts, iou_thr: float = 0.5) -> np.ndarray:
    """Label each prediction of one image TP (True) or FP (False).

    Predictions are visited by descending score.  Each claims the unmatched
    GT it overlaps most (lowest index on ties) and is a TP only when that
    IoU is strictly greater than ``iou_thr``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    labels = np.zeros(len(boxes), dtype=bool)
    if len(boxes) == 0 or len(gts) == 0:
        return labels
    ious = pairwise_iou(boxes, gts)
    taken = np.zeros(len(gts), dtype=bool)
    for i in _score_order(scores):
        cand = np.where(taken, -np.inf, ious[i])
        j = int(np.argmax(cand))
        if cand[j] > iou_thr:
            labels[i] = True
            taken[j] = True
    return labels


def froc_curve(scores, labels, image_count: int, gt_count: int) -> list[FrocPoint]:
    """One point per distinct score, thresholds decreasing.

    ``scores``/``labels`` are the pooled predictions of the whole dataset.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if image_count <= 0:
        raise ValueError("image_count must be positive")
    if len(scores) == 0:
        return [FrocPoint(float("inf"), 0.0, 0.0)]
    order = _score_order(scores)
    s = scores[order]
    tp = np.cumsum(labels[order])
    fp = np.cumsum(~labels[order])
    # last index of each run of equal scores
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    denom = max(gt_count, 1)
    return [FrocPoint(float(s[e]), fp[e] / image_count, tp[e] / denom) for e in ends]


def sensitivity_at_fppi(curve, targets=FPPI_TARGETS) -> tuple[dict, float]:
    """Step-function lookup: best sensitivity among points with ``fppi <= target``."""
    sens = {}
    for target in targets:
        ok = [p.sensitivity for p in curve if p.fppi <= target]
        sens[float(target)] = max(ok) if ok else 0.0
    avg = float(np.mean(list(sens.values()))) if sens else 0.0
    return sens, avg


def nms(boxes, scores, iou_thr: float = 0.5) -> np.ndarray:
    """Indices kept by greedy non-maximum suppression, in descending score order."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if len(boxes) == 0:
        return np.zeros(0, dtype=np.int64)
    order = _score_order(scores)
    ious = pairwise_iou(boxes, boxes)
    keep = []
    suppressed = np.zeros(len(boxes), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= ious[i] > iou_thr
    return np.asarray(keep, dtype=np.int64)


def evaluate(predictions, ground_truth, iou_thr: float = 0.5, targets=FPPI_TARGETS) -> dict:
    """FROC report for a dataset.

    ``predictions`` and ``ground_truth`` map ``image_id`` to ``(boxes, scores)``
    and GT boxes respectively (same coordinate system).  Images missing from
    ``predictions`` count as having no detections.
    """
    all_scores, all_labels = [], []
    gt_count = 0
    for image_id, gts in ground_truth.items():
        gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
        gt_count += len(gts)
        boxes, scores = predictions.get(image_id, (np.zeros((0, 4)), np.zeros(0)))
        all_scores.append(np.asarray(scores, dtype=np.float64).reshape(-1))
        all_labels.append(match_tp_fp(boxes, scores, gts, iou_thr))
    scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
    labels = np.concatenate(all_labels) if all_labels else np.zeros(0, dtype=bool)
    curve = froc_curve(scores, labels, max(len(ground_truth), 1), gt_count)
    sens, avg = sensitivity_at_fppi(curve, targets)
    return {
        "image_count": len(ground_truth),
        "gt_count": gt_count,
        "prediction_count": int(len(scores)),
        "true_positives": int(labels.sum()),
        "iou_threshold": float(iou_thr),
        "sensitivity": {f"{k:g}": float(v) for k, v in sens.items()},
        "average_sensitivity": float(avg),
        "curve": [[float(p.threshold), float(p.fppi), float(p.sensitivity)] for p in curve],
    }
