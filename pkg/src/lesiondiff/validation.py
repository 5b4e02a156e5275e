"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

import numpy as np


def check_images(X) -> np.ndarray:
    """Return ``X`` as a finite float array of shape ``(n, H, W)``."""
    if isinstance(X, (list, tuple)) and len(X) == 0:
        raise ValueError("expected at least one image")
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected images of shape (n, H, W), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("expected at least one image")
    if not np.all(np.isfinite(arr)):
        raise ValueError("images contain non-finite values")
    return arr


def check_box_lists(y, n_images: int) -> list[np.ndarray]:
    """Per-image ground-truth boxes as ``(k, 4)`` float arrays with ``x1 < x2``, ``y1 < y2``."""
    if y is None:
        raise ValueError("ground-truth boxes are required")
    if len(y) != n_images:
        raise ValueError(f"got {len(y)} box lists for {n_images} images")
    out = []
    for i, boxes in enumerate(y):
        b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(b)):
            raise ValueError(f"image {i}: non-finite box coordinates")
        if np.any(b[:, 2] <= b[:, 0]) or np.any(b[:, 3] <= b[:, 1]):
            raise ValueError(f"image {i}: boxes must satisfy x1 < x2 and y1 < y2")
        out.append(b)
    return out


def check_random_state_seed(random_state) -> int:
    if random_state is None:
        return 0
    if isinstance(random_state, (int, np.integer)) and random_state >= 0:
        return int(random_state)
    raise ValueError(f"random_state must be a non-negative integer, got {random_state!r}")
