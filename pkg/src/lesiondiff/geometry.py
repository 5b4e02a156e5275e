"""Axis-aligned boxes in corner form ``[x1, y1, x2, y2]``.

Boxes live in unit-normalized image coordinates (fractions of width and
height) everywhere except dataset and evaluation I/O.  All functions accept
arrays whose last axis has length 4 and broadcast over the leading axes.
"""
from __future__ import annotations

import numpy as np

MIN_SIDE = 1e-3
DEFAULT_B_SCALE = 2.0


def _as_boxes(boxes) -> np.ndarray:
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.shape[-1:] != (4,):
        raise ValueError(f"boxes must have a trailing axis of length 4, got shape {arr.shape}")
    return arr


def area(boxes) -> np.ndarray:
    b = _as_boxes(boxes)
    return (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])


def iou(a, b) -> np.ndarray:
    """Intersection over union of ``a`` and ``b`` (broadcast elementwise)."""
    a = _as_boxes(a)
    b = _as_boxes(b)
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0.0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0.0, None)
    inter = iw * ih
    union = area(a) + area(b) - inter
    return inter / union


def giou(a, b) -> np.ndarray:
    """Generalized IoU: ``iou - (enclosure - union) / enclosure``."""
    a = _as_boxes(a)
    b = _as_boxes(b)
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0.0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0.0, None)
    inter = iw * ih
    union = area(a) + area(b) - inter
    ew = np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])
    eh = np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])
    enclosure = ew * eh
    return inter / union - (enclosure - union) / enclosure


def pairwise_iou(a, b) -> np.ndarray:
    """``(n, m)`` IoU matrix between ``n`` boxes and ``m`` boxes."""
    a = _as_boxes(a).reshape(-1, 4)
    b = _as_boxes(b).reshape(-1, 4)
    return iou(a[:, None, :], b[None, :, :])


def pairwise_giou(a, b) -> np.ndarray:
    a = _as_boxes(a).reshape(-1, 4)
    b = _as_boxes(b).reshape(-1, 4)
    return giou(a[:, None, :], b[None, :, :])


def corners_to_center(boxes) -> np.ndarray:
    """``[x1, y1, x2, y2] -> [cx, cy, w, h]``."""
    b = _as_boxes(boxes)
    return np.stack(
        [
            (b[..., 0] + b[..., 2]) / 2,
            (b[..., 1] + b[..., 3]) / 2,
            b[..., 2] - b[..., 0],
            b[..., 3] - b[..., 1],
        ],
        axis=-1,
    )


def center_to_corners(cxcywh) -> np.ndarray:
    c = _as_boxes(cxcywh)
    if np.any(c[..., 2] <= 0) or np.any(c[..., 3] <= 0):
        raise ValueError("width and height must be positive")
    hw = c[..., 2] / 2
    hh = c[..., 3] / 2
    return np.stack([c[..., 0] - hw, c[..., 1] - hh, c[..., 0] + hw, c[..., 1] + hh], axis=-1)


def sanitize(raw, min_side: float = MIN_SIDE) -> np.ndarray:
    """Repair raw corner quadruples into valid boxes inside the unit square.

    Coordinates are clamped to ``[0, 1]``, corners reordered, and any side
    shorter than ``min_side`` is grown symmetrically about its midpoint
    (shifted back inside the image when it would cross the border).
    """
    r = _as_boxes(raw)
    if not np.all(np.isfinite(r)):
        raise ValueError("cannot sanitize non-finite box coordinates")
    r = np.clip(r, 0.0, 1.0)
    lo = np.minimum(r[..., :2], r[..., 2:])
    hi = np.maximum(r[..., :2], r[..., 2:])
    # tolerance keeps sanitize idempotent for sides that came out of a previous expansion
    short = (hi - lo) < min_side * (1 - 1e-9)
    if np.any(short):
        mid = np.clip((lo + hi) / 2, min_side / 2, 1 - min_side / 2)
        lo = np.where(short, mid - min_side / 2, lo)
        hi = np.where(short, mid + min_side / 2, hi)
    return np.concatenate([lo, hi], axis=-1)


def signal_encode(boxes, b_scale: float = DEFAULT_B_SCALE) -> np.ndarray:
    """Map unit coordinates ``u`` to ``(2u - 1) * b_scale``."""
    if b_scale <= 0:
        raise ValueError("b_scale must be positive")
    return (2.0 * _as_boxes(boxes) - 1.0) * b_scale


def clamp_signal(points, b_scale: float = DEFAULT_B_SCALE) -> np.ndarray:
    return np.clip(np.asarray(points, dtype=np.float64), -b_scale, b_scale)


def signal_decode(points, b_scale: float = DEFAULT_B_SCALE) -> np.ndarray:
    """Inverse of :func:`signal_encode`; clamps to ``±b_scale`` then sanitizes."""
    if b_scale <= 0:
        raise ValueError("b_scale must be positive")
    p = clamp_signal(points, b_scale)
    return sanitize((p / b_scale + 1.0) / 2.0)


def to_pixels(boxes, width: int, height: int) -> np.ndarray:
    return _as_boxes(boxes) * np.array([width, height, width, height], dtype=np.float64)


def to_unit(boxes, width: int, height: int) -> np.ndarray:
    return _as_boxes(boxes) / np.array([width, height, width, height], dtype=np.float64)
