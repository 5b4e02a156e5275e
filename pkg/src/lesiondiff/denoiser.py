"""Box denoisers: a small tanh perceptron over ROI-pooled window features, and a
ground-truth oracle used to validate the sampling loop."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import DEFAULT_B_SCALE, clamp_signal, iou, signal_decode, signal_encode

TIME_DIM = 8
ROI_GRID = 4
ROI_SUBSAMPLES = 2
N_CHANNELS = 3
LAYERS = (4 + TIME_DIM + N_CHANNELS * ROI_GRID**2, 64, 64, 5)
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
CHECKPOINT_FORMAT = "lesiondiff-checkpoint"
CHECKPOINT_VERSION = 1
ORACLE_LOGIT = 4.0


@dataclass
class DenoiserOutput:
    pred_boxes: np.ndarray  # (K, 4) sanitized unit boxes, the z_0 estimates
    conf_logits: np.ndarray  # (K,)

    def __len__(self):
        return len(self.pred_boxes)


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in PARAM_NAMES]

    @classmethod
    def from_arrays(cls, arrays) -> "MlpParams":
        return cls(*[np.asarray(a, dtype=np.float64) for a in arrays])

    def copy(self) -> "MlpParams":
        return MlpParams.from_arrays([a.copy() for a in self.arrays()])

    def check(self):
        for name, arr in zip(PARAM_NAMES, self.arrays()):
            i = PARAM_NAMES.index(name) // 2
            want = (LAYERS[i], LAYERS[i + 1]) if name.startswith("W") else (LAYERS[i + 1],)
            if arr.shape != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {want}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")


def init_params(seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    arrays = []
    for fan_in, fan_out in zip(LAYERS[:-1], LAYERS[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arrays.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        arrays.append(np.zeros(fan_out))
    return MlpParams.from_arrays(arrays)


def zero_params() -> MlpParams:
    return MlpParams.from_arrays([np.zeros_like(a) for a in init_params(0).arrays()])


def time_embed(t: int, T: int, d: int = TIME_DIM) -> np.ndarray:
    """Interleaved ``[sin(f t/T), cos(f t/T), ...]`` for frequencies 1, 4, 16, ..."""
    if d % 2:
        raise ValueError("embedding size must be even")
    freqs = 4.0 ** np.arange(d // 2)
    phase = freqs * (t / T)
    out = np.empty(d)
    out[0::2] = np.sin(phase)
    out[1::2] = np.cos(phase)
    return out


def roi_pool(windows, boxes, G: int = ROI_GRID, subsamples: int = ROI_SUBSAMPLES) -> np.ndarray:
    """Average window intensity over a ``G x G`` grid of cells covering each box.

    Each cell is sampled at ``subsamples x subsamples`` evenly spaced points,
    each read from the nearest pixel (border-clamped).  Output per box is
    channel-major then row-major, length ``C * G * G``.
    """
    win = np.asarray(windows)
    C, H, W = win.shape
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    k = len(b)
    n = G * subsamples
    frac = (np.arange(n) + 0.5) / n
    xs = b[:, 0:1] + frac[None, :] * (b[:, 2:3] - b[:, 0:1])
    ys = b[:, 1:2] + frac[None, :] * (b[:, 3:4] - b[:, 1:2])
    ix = np.clip(np.floor(xs * W).astype(np.int64), 0, W - 1)
    iy = np.clip(np.floor(ys * H).astype(np.int64), 0, H - 1)
    vals = win[:, iy[:, :, None], ix[:, None, :]]  # (C, k, n, n)
    vals = vals.reshape(C, k, G, subsamples, G, subsamples).mean(axis=(3, 5))
    return vals.transpose(1, 0, 2, 3).reshape(k, C * G * G).astype(np.float64)


def build_features(boxes_signal, t: int, T: int, windows, b_scale: float = DEFAULT_B_SCALE):
    z = np.asarray(boxes_signal, dtype=np.float64).reshape(-1, 4)
    te = np.broadcast_to(time_embed(t, T), (len(z), TIME_DIM))
    pooled = roi_pool(windows, signal_decode(z, b_scale))
    return np.concatenate([z, te, pooled], axis=1)


def mlp_forward(params: MlpParams, boxes_signal, t: int, T: int, windows,
                b_scale: float = DEFAULT_B_SCALE):
    """Predict z_0 boxes and confidence logits for a set of noisy signal boxes.

    Returns ``(DenoiserOutput, cache)``; ``cache`` feeds :func:`mlp_backward`.
    """
    z = np.asarray(boxes_signal, dtype=np.float64).reshape(-1, 4)
    x = build_features(z, t, T, windows, b_scale)
    h1 = np.tanh(x @ params.W1 + params.b1)
    h2 = np.tanh(h1 @ params.W2 + params.b2)
    out = h2 @ params.W3 + params.b3
    z0 = clamp_signal(z + out[:, :4], b_scale)
    pred = DenoiserOutput(signal_decode(z0, b_scale), out[:, 4].copy())
    cache = {"x": x, "h1": h1, "h2": h2, "out": out, "b_scale": b_scale}
    return pred, cache


def mlp_backward(params: MlpParams, cache, grad_boxes, grad_logits) -> MlpParams:
    """Reverse-mode gradients of the forward map.

    ``grad_boxes`` is d loss / d predicted unit corners.  Clamping and
    sanitation are passed straight through, so the box residual receives
    ``grad_boxes / (2 * b_scale)``.
    """
    g_out = np.empty_like(cache["out"])
    g_out[:, :4] = np.asarray(grad_boxes, dtype=np.float64).reshape(-1, 4) / (2.0 * cache["b_scale"])
    g_out[:, 4] = np.asarray(grad_logits, dtype=np.float64).reshape(-1)
    h1, h2, x = cache["h1"], cache["h2"], cache["x"]
    gW3 = h2.T @ g_out
    gb3 = g_out.sum(0)
    g_a2 = (g_out @ params.W3.T) * (1.0 - h2**2)
    gW2 = h1.T @ g_a2
    gb2 = g_a2.sum(0)
    g_a1 = (g_a2 @ params.W2.T) * (1.0 - h1**2)
    gW1 = x.T @ g_a1
    gb1 = g_a1.sum(0)
    return MlpParams(gW1, gb1, gW2, gb2, gW3, gb3)


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    @classmethod
    def for_params(cls, params: MlpParams, **hyper) -> "AdamState":
        return cls(m=[np.zeros_like(a) for a in params.arrays()],
                   v=[np.zeros_like(a) for a in params.arrays()], **hyper)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState):
    """One Adam update with decoupled weight decay; returns new ``(params, state)``."""
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        p = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps) - state.lr * state.weight_decay * p
        new_p.append(p)
        new_m.append(m)
        new_v.append(v)
    return MlpParams.from_arrays(new_p), replace(state, m=new_m, v=new_v, step=step)


def oracle_denoise(boxes_signal, t: int, gt_boxes, b_scale: float = DEFAULT_B_SCALE) -> DenoiserOutput:
    """Cheating denoiser: snap every box to the GT with the nearest center."""
    inp = signal_decode(np.asarray(boxes_signal, dtype=np.float64).reshape(-1, 4), b_scale)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(gt) == 0:
        return DenoiserOutput(inp, np.full(len(inp), -ORACLE_LOGIT))
    ci = (inp[:, :2] + inp[:, 2:]) / 2
    cg = (gt[:, :2] + gt[:, 2:]) / 2
    d2 = ((ci[:, None, :] - cg[None, :, :]) ** 2).sum(-1)
    nearest = np.argmin(d2, axis=1)
    pred = gt[nearest].copy()
    logits = np.where(iou(inp, pred) > 0.05, ORACLE_LOGIT, -ORACLE_LOGIT)
    return DenoiserOutput(pred, logits)


class MlpDenoiser:
    """Callable wrapper binding parameters to the sampling-loop interface."""

    def __init__(self, params: MlpParams, T: int, b_scale: float = DEFAULT_B_SCALE):
        self.params = params
        self.T = T
        self.b_scale = b_scale

    def __call__(self, boxes_signal, t, windows, gt_boxes=None) -> DenoiserOutput:
        out, _ = mlp_forward(self.params, boxes_signal, t, self.T, windows, self.b_scale)
        return out


class OracleDenoiser:
    def __init__(self, b_scale: float = DEFAULT_B_SCALE):
        self.b_scale = b_scale

    def __call__(self, boxes_signal, t, windows, gt_boxes=None) -> DenoiserOutput:
        if gt_boxes is None:
            raise ValueError("the oracle denoiser needs the image's ground-truth boxes")
        return oracle_denoise(boxes_signal, t, gt_boxes, self.b_scale)


def save_checkpoint(path, params: MlpParams, seed: int, extra: dict | None = None) -> None:
    """Write parameters as JSON text; Python float repr round-trips exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": {
            "layers": list(LAYERS),
            "activation": "tanh",
            "time_dim": TIME_DIM,
            "roi_grid": ROI_GRID,
            "roi_subsamples": ROI_SUBSAMPLES,
        },
        "seed": int(seed),
        "params": {k: a.tolist() for k, a in zip(PARAM_NAMES, params.arrays())},
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    if tuple(doc["architecture"]["layers"]) != LAYERS:
        raise ValueError(f"{path}: architecture {doc['architecture']['layers']} != {list(LAYERS)}")
    params = MlpParams.from_arrays([doc["params"][k] for k in PARAM_NAMES])
    params.check()
    return params, doc
