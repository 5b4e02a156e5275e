"""Training (pad -> corrupt -> denoise -> match -> loss -> Adam) and
iterative box refinement at inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .denoiser import PARAM_NAMES, AdamState, MlpParams, adam_step, init_params, mlp_backward, mlp_forward
from .diffusion import NoiseSchedule, corrupt, cosine_schedule, ddim_step, timestep_ladder
from .evalmetrics import nms
from .geometry import DEFAULT_B_SCALE, clamp_signal, signal_encode, to_unit
from .matching import CostWeights, set_loss
from .padding import PaddingConfig, pad_targets
from .synthdata import multi_window

log = logging.getLogger(__name__)

# what the predictions are matched against:
#   original    - the real GT boxes only
#   perturbated - every padded box derived from a GT (origin >= 0)
#   replicated  - for every padded box derived from a GT, a copy of that GT
LOSS_TARGETS = ("original", "perturbated", "replicated")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    padding: PaddingConfig = field(default_factory=PaddingConfig)
    weights: CostWeights = field(default_factory=CostWeights)
    T: int = 1000
    s_offset: float = 0.008
    b_scale: float = DEFAULT_B_SCALE
    iterations: int = 120_000
    batch_size: int = 4
    seed: int = 0
    loss_target: str = "original"
    lr: float = 2e-4
    weight_decay: float = 1e-4
    lr_decay_at: tuple = (0.5, 0.8333333333333334)
    conf_iou_gate: float | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss_target not in LOSS_TARGETS:
            raise ValueError(f"loss_target must be one of {LOSS_TARGETS}, got {self.loss_target!r}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.b_scale <= 0:
            raise ValueError("b_scale must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")
        if self.conf_iou_gate is not None and not 0.0 <= self.conf_iou_gate < 1.0:
            raise ValueError("conf_iou_gate must lie in [0, 1) or be None")


@dataclass(frozen=True)
class InferConfig:
    steps: int = 4
    lambda_conf: float = 0.5
    N: int = 300
    seed: int = 0
    use_nms: bool = True
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0 <= self.lambda_conf <= 1:
            raise ValueError("lambda_conf must lie in [0, 1]")
        if self.N < 1:
            raise ValueError("N must be >= 1")


@dataclass
class PreparedSample:
    """Model-side view of a sample: window channels plus unit-space GT boxes."""

    windows: np.ndarray
    gt_unit: np.ndarray
    image_id: str = ""

    @classmethod
    def from_image(cls, image, gt_pixels, image_id: str = ""):
        H, W = np.shape(image)
        gt = np.asarray(gt_pixels, dtype=np.float64).reshape(-1, 4)
        return cls(multi_window(image).astype(np.float32), to_unit(gt, W, H), image_id)


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Step decay: divide by 10 at each fraction in ``cfg.lr_decay_at`` of the run."""
    lr = cfg.lr
    for frac in cfg.lr_decay_at:
        if iteration >= int(round(frac * cfg.iterations)):
            lr /= 10.0
    return lr


def _image_grads(params, sample: PreparedSample, cfg: TrainConfig, sched: NoiseSchedule, rng):
    padded = pad_targets(sample.gt_unit, cfg.padding, rng, cfg.b_scale)
    z0 = signal_encode(padded.boxes, cfg.b_scale)
    t = int(rng.integers(1, cfg.T + 1))
    zt = corrupt(z0, t, sched, rng.standard_normal(z0.shape), cfg.b_scale)
    out, cache = mlp_forward(params, zt, t, cfg.T, sample.windows, cfg.b_scale)
    if cfg.loss_target == "original":
        targets = sample.gt_unit
    elif cfg.loss_target == "perturbated":
        targets = padded.boxes[padded.origin >= 0]
    else:
        targets = sample.gt_unit[padded.origin[padded.origin >= 0]]
    loss, g_boxes, g_logits, _ = set_loss(out.pred_boxes, out.conf_logits, targets, cfg.weights,
                                        cfg.conf_iou_gate)
    return loss, mlp_backward(params, cache, g_boxes, g_logits)


def _check_finite(params: MlpParams):
    for name, a in zip(PARAM_NAMES, params.arrays()):
        if not np.all(np.isfinite(a)):
            raise TrainingDiverged(f"non-finite values in parameter {name}")


def train_step(params: MlpParams, state: AdamState, batch, cfg: TrainConfig,
               rng: np.random.Generator, sched: NoiseSchedule | None = None):
    """One optimizer step on the batch-mean loss; returns ``(params, state, loss)``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if sched is None:
        sched = cosine_schedule(cfg.T, cfg.s_offset)
    _check_finite(params)
    total = 0.0
    acc = None
    for sample in batch:
        loss, grads = _image_grads(params, sample, cfg, sched, rng)
        total += loss
        arrays = grads.arrays()
        acc = arrays if acc is None else [a + g for a, g in zip(acc, arrays)]
    k = len(batch)
    loss = total / k
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite training loss {loss!r}")
    mean_grads = MlpParams.from_arrays([a / k for a in acc])
    params, state = adam_step(params, mean_grads, state)
    _check_finite(params)
    return params, state, loss


def train_loop(samples, cfg: TrainConfig, params: MlpParams | None = None, callback=None):
    """Run ``cfg.iterations`` steps over shuffled minibatches.

    Returns ``(params, state, losses)``.  ``callback(iteration, loss)`` is
    invoked after every step when given.
    """
    if not samples:
        raise ValueError("no training samples")
    rng = np.random.default_rng(cfg.seed)
    sched = cosine_schedule(cfg.T, cfg.s_offset)
    if params is None:
        params = init_params(cfg.seed)
    state = AdamState.for_params(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    order = rng.permutation(len(samples))
    pos = 0
    losses = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        batch = []
        while len(batch) < cfg.batch_size:
            if pos == len(order):
                order = rng.permutation(len(samples))
                pos = 0
            batch.append(samples[order[pos]])
            pos += 1
        state = replace(state, lr=lr_at(it, cfg))
        params, state, loss = train_step(params, state, batch, cfg, rng, sched)
        losses[it] = loss
        if callback is not None:
            callback(it, loss)
    return params, state, losses


def infer_image(denoiser, windows, cfg: InferConfig, sched: NoiseSchedule,
                rng: np.random.Generator, gt_boxes=None, b_scale: float = DEFAULT_B_SCALE):
    """Refine random boxes into detections for one image.

    ``denoiser(boxes_signal, t, windows, gt_boxes)`` returns a
    :class:`~lesiondiff.denoiser.DenoiserOutput`.  Each refinement step
    denoises, drops proposals scoring below ``lambda_conf``, moves the
    survivors one DDIM step and refills to ``N`` with fresh Gaussian boxes;
    the last step emits the survivors without refilling.

    Returns ``(boxes, scores)`` with boxes in unit coordinates.
    """
    ladder = timestep_ladder(sched.T, cfg.steps)
    z = clamp_signal(rng.standard_normal((cfg.N, 4)), b_scale)
    boxes = np.zeros((0, 4))
    scores = np.zeros(0)
    for t, t_prev in zip(ladder[:-1], ladder[1:]):
        assert len(z) == cfg.N
        assert np.all(np.abs(z) <= b_scale)
        out = denoiser(z, t, windows, gt_boxes)
        prob = 0.5 * (1.0 + np.tanh(0.5 * out.conf_logits))
        keep = prob >= cfg.lambda_conf
        z0_hat = signal_encode(out.pred_boxes[keep], b_scale)
        z_next = ddim_step(z[keep], z0_hat, t, t_prev, sched, b_scale)
        if t_prev == 0:
            boxes = out.pred_boxes[keep]
            scores = prob[keep]
            break
        fresh = clamp_signal(rng.standard_normal((cfg.N - len(z_next), 4)), b_scale)
        z = np.concatenate([z_next, fresh])
    if cfg.use_nms and len(boxes):
        kept = nms(boxes, scores, cfg.nms_iou)
        boxes, scores = boxes[kept], scores[kept]
    return boxes, scores
