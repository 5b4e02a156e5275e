"""One-to-one assignment of predictions to ground truth and the set-wise loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import iou, pairwise_giou


@dataclass(frozen=True)
class CostWeights:
    lambda_l1: float = 2.0
    lambda_giou: float = 5.0
    lambda_conf_bce: float = 1.0

    def __post_init__(self):
        for name in ("lambda_l1", "lambda_giou", "lambda_conf_bce"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class MatchResult:
    assignment: dict  # gt index -> prediction index
    total_cost: float


def cost_matrix(pred_boxes, gt_boxes, w: CostWeights) -> np.ndarray:
    """``(N, M)`` matrix of :func:`pair_cost` values."""
    p = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    l1 = np.abs(p[:, None, :] - g[None, :, :]).sum(-1)
    return w.lambda_l1 * l1 + w.lambda_giou * (1.0 - pairwise_giou(p, g))


def pair_cost(pred, gt, w: CostWeights) -> float:
    return float(cost_matrix(pred, gt, w)[0, 0])


def hungarian(cost) -> tuple[dict, float]:
    """Minimum-cost injective assignment of rows to columns.

    Returns ``({row: col}, total_cost)`` covering ``min(R, C)`` pairs.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.size == 0:
        return {}, 0.0
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(c)
    return {int(r): int(k) for r, k in zip(rows, cols)}, float(c[rows, cols].sum())


def _giou_and_grad(p: np.ndarray, g: np.ndarray):
    """GIoU of matched pairs ``p[k]`` vs ``g[k]`` and d giou / d p (shape (k, 4))."""
    ix1 = np.maximum(p[:, 0], g[:, 0])
    iy1 = np.maximum(p[:, 1], g[:, 1])
    ix2 = np.minimum(p[:, 2], g[:, 2])
    iy2 = np.minimum(p[:, 3], g[:, 3])
    iw_raw = ix2 - ix1
    ih_raw = iy2 - iy1
    iw = np.maximum(iw_raw, 0.0)
    ih = np.maximum(ih_raw, 0.0)
    inter = iw * ih

    pw = p[:, 2] - p[:, 0]
    ph = p[:, 3] - p[:, 1]
    ap = pw * ph
    ag = (g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1])
    union = ap + ag - inter

    ex1 = np.minimum(p[:, 0], g[:, 0])
    ey1 = np.minimum(p[:, 1], g[:, 1])
    ex2 = np.maximum(p[:, 2], g[:, 2])
    ey2 = np.maximum(p[:, 3], g[:, 3])
    ew = ex2 - ex1
    eh = ey2 - ey1
    encl = ew * eh

    value = inter / union - 1.0 + union / encl

    # partials of the clipped intersection extents w.r.t. predicted corners
    w_pos = (iw_raw > 0).astype(np.float64)
    h_pos = (ih_raw > 0).astype(np.float64)
    gt_ = lambda u, v: (u > v).astype(np.float64)  # noqa: E731
    zero = np.zeros(len(p))
    d_iw = np.stack([-gt_(p[:, 0], g[:, 0]) * w_pos, zero, gt_(g[:, 2], p[:, 2]) * w_pos, zero], axis=1)
    d_ih = np.stack([zero, -gt_(p[:, 1], g[:, 1]) * h_pos, zero, gt_(g[:, 3], p[:, 3]) * h_pos], axis=1)
    d_inter = d_iw * ih[:, None] + d_ih * iw[:, None]
    d_ap = np.stack([-ph, -pw, ph, pw], axis=1)
    d_union = d_ap - d_inter
    d_ew = np.stack([-gt_(g[:, 0], p[:, 0]), zero, gt_(p[:, 2], g[:, 2]), zero], axis=1)
    d_eh = np.stack([zero, -gt_(g[:, 1], p[:, 1]), zero, gt_(p[:, 3], g[:, 3])], axis=1)
    d_encl = d_ew * eh[:, None] + d_eh * ew[:, None]

    u = union[:, None]
    c = encl[:, None]
    grad = (d_inter / u - inter[:, None] * d_union / u**2
            + d_union / c - u * d_encl / c**2)
    return value, grad


def set_loss(pred_boxes, conf_logits, gt_boxes, w: CostWeights, conf_iou_gate: float | None = None):
    """Set-wise detection loss with gradients, holding the matching fixed.

    loss = sum over matched pairs of ``lambda_l1 * L1 + lambda_giou * (1 - GIoU)``
    divided by ``max(M, 1)``, plus ``lambda_conf_bce`` times the mean binary
    cross-entropy of every confidence logit against "was matched".  With
    ``conf_iou_gate`` set, a matched prediction only counts as positive when
    its IoU with the assigned target exceeds the gate.

    Returns
    -------
    loss : float
    grad_boxes : ndarray (N, 4)
        d loss / d predicted corners (unit coordinates).
    grad_logits : ndarray (N,)
    match : MatchResult
    """
    p = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    logits = np.asarray(conf_logits, dtype=np.float64).reshape(-1)
    g = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    n, m = len(p), len(g)
    if len(logits) != n:
        raise ValueError("conf_logits must have one entry per predicted box")
    if m > n:
        raise ValueError(f"more ground-truth boxes ({m}) than predictions ({n})")

    grad_boxes = np.zeros_like(p)
    target = np.zeros(n)
    loss = 0.0
    if m:
        assignment, total = hungarian(cost_matrix(p, g, w).T)
        gi = np.fromiter(assignment.keys(), dtype=np.int64, count=len(assignment))
        pi = np.fromiter(assignment.values(), dtype=np.int64, count=len(assignment))
        diff = p[pi] - g[gi]
        gval, ggrad = _giou_and_grad(p[pi], g[gi])
        box_loss = w.lambda_l1 * np.abs(diff).sum() + w.lambda_giou * (1.0 - gval).sum()
        loss += box_loss / m
        grad_boxes[pi] = (w.lambda_l1 * np.sign(diff) - w.lambda_giou * ggrad) / m
        if conf_iou_gate is None:
            target[pi] = 1.0
        else:
            target[pi] = (iou(p[pi], g[gi]) > conf_iou_gate).astype(np.float64)
        match = MatchResult(assignment, total)
    else:
        match = MatchResult({}, 0.0)

    # numerically stable BCE on logits: softplus(l) - y * l
    bce = np.logaddexp(0.0, logits) - target * logits
    loss += w.lambda_conf_bce * bce.mean()
    prob = 0.5 * (1.0 + np.tanh(0.5 * logits))
    grad_logits = w.lambda_conf_bce * (prob - target) / n
    return float(loss), grad_boxes, grad_logits, match
