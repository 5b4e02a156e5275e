"""Expanding a sparse set of ground-truth boxes to a fixed number of training targets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DEFAULT_B_SCALE, corners_to_center, sanitize, signal_decode

STRATEGIES = ("none", "duplicate", "uniform", "gaussian", "center_aligned")
NO_ORIGIN = -1
MAX_CENTER_DRAWS = 1000


@dataclass(frozen=True)
class PaddingConfig:
    strategy: str = "center_aligned"
    N: int = 300
    lambda_scale: float = 0.4

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"unknown padding strategy {self.strategy!r}; valid: {', '.join(STRATEGIES)}"
            )
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if not 0 < self.lambda_scale < 1:
            raise ValueError(f"lambda_scale must lie in (0, 1), got {self.lambda_scale!r}")


@dataclass(frozen=True)
class PaddedTargets:
    boxes: np.ndarray  # (N, 4) unit coordinates
    origin: np.ndarray  # (N,) index into the original GT list, NO_ORIGIN for random fill

    def __len__(self):
        return len(self.boxes)


def sigma_of(gt) -> float | np.ndarray:
    """Size-adaptive std of the center perturbation: ``(w + h) / 6``."""
    gt = np.asarray(gt, dtype=np.float64)
    return ((gt[..., 2] - gt[..., 0]) + (gt[..., 3] - gt[..., 1])) / 6.0


def _sample_center_aligned(gts: np.ndarray, lambda_scale: float, rng: np.random.Generator):
    k = len(gts)
    c = corners_to_center(gts)
    w, h = c[:, 2], c[:, 3]
    new_w = rng.uniform((1 - lambda_scale) * w, (1 + lambda_scale) * w)
    new_h = rng.uniform((1 - lambda_scale) * h, (1 + lambda_scale) * h)
    sigma = sigma_of(gts)

    # rejection sampling: Gaussian density restricted to the GT interior
    cx = c[:, 0].copy()
    cy = c[:, 1].copy()
    pending = np.ones(k, dtype=bool)
    for _ in range(MAX_CENTER_DRAWS):
        idx = np.flatnonzero(pending)
        if idx.size == 0:
            break
        x = rng.normal(c[idx, 0], sigma[idx])
        y = rng.normal(c[idx, 1], sigma[idx])
        ok = (x > gts[idx, 0]) & (x < gts[idx, 2]) & (y > gts[idx, 1]) & (y < gts[idx, 3])
        cx[idx[ok]] = x[ok]
        cy[idx[ok]] = y[ok]
        pending[idx[ok]] = False
    # anything still pending keeps the GT center

    # shift (not clip) boxes that poke out of the image so the sampled scale survives
    cx = np.clip(cx, new_w / 2, 1 - new_w / 2)
    cy = np.clip(cy, new_h / 2, 1 - new_h / 2)
    boxes = np.stack([cx - new_w / 2, cy - new_h / 2, cx + new_w / 2, cy + new_h / 2], axis=1)
    return sanitize(boxes)


def sample_center_aligned(gt, lambda_scale: float, rng: np.random.Generator) -> np.ndarray:
    """One perturbated box whose center stays inside ``gt``.

    Width and height are drawn uniformly within ``±lambda_scale`` of the GT
    size, the center from an isotropic Gaussian at the GT center with
    ``sigma_of(gt)``, truncated to the GT interior.
    """
    gt = np.asarray(gt, dtype=np.float64).reshape(1, 4)
    return _sample_center_aligned(gt, lambda_scale, rng)[0]


def gaussian_fill(n: int, rng: np.random.Generator, b_scale: float = DEFAULT_B_SCALE) -> np.ndarray:
    """Boxes decoded from standard-normal signal points (the inference-time prior)."""
    return signal_decode(rng.standard_normal((n, 4)), b_scale)


def pad_targets(gt_boxes, cfg: PaddingConfig, rng: np.random.Generator,
                b_scale: float = DEFAULT_B_SCALE) -> PaddedTargets:
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    N = cfg.N
    if len(gt) == 0:
        return PaddedTargets(gaussian_fill(N, rng, b_scale), np.full(N, NO_ORIGIN, dtype=np.int64))

    gt = sanitize(gt)[:N]
    m = len(gt)
    n_extra = N - m
    origin = np.concatenate([np.arange(m), np.full(n_extra, NO_ORIGIN)]).astype(np.int64)

    if cfg.strategy in ("none", "gaussian"):
        extra = gaussian_fill(n_extra, rng, b_scale)
    elif cfg.strategy == "uniform":
        extra = sanitize(rng.uniform(0.0, 1.0, size=(n_extra, 4)))
    elif cfg.strategy == "duplicate":
        src = np.arange(n_extra) % m
        extra = gt[src]
        origin[m:] = src
    else:  # center_aligned
        src = np.arange(n_extra) % m
        extra = _sample_center_aligned(gt[src], cfg.lambda_scale, rng)
        origin[m:] = src
    return PaddedTargets(np.concatenate([gt, extra.reshape(-1, 4)]), origin)
