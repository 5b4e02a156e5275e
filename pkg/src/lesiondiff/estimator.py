"""scikit-learn style front end: a detector estimator plus two transformers."""
from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .denoiser import MlpDenoiser, OracleDenoiser
from .diffusion import cosine_schedule
from .evalmetrics import evaluate
from .geometry import to_pixels, to_unit
from .matching import CostWeights
from .padding import PaddingConfig, pad_targets
from .pipeline import InferConfig, PreparedSample, TrainConfig, infer_image, train_loop
from .synthdata import WINDOWS, window_transform
from .validation import check_box_lists, check_images, check_random_state_seed

log = logging.getLogger(__name__)

DENOISERS = ("mlp", "oracle")


class DiffusionBoxDetector(BaseEstimator):
    """Lesion detector that refines random boxes into detections.

    ``fit`` trains the box denoiser on images of HU-like values ``X`` with
    per-image pixel-coordinate ground-truth boxes ``y``; ``predict`` returns
    one ``(boxes, scores)`` pair per image, boxes in pixel coordinates.

    With ``denoiser="oracle"`` no training happens and ``predict`` needs the
    true boxes through ``gt_boxes``; this checks the sampling loop in
    isolation.
    """

    def __init__(self, padding="center_aligned", n_boxes=300, lambda_scale=0.4,
                 loss_target="original", timesteps=1000, s_offset=0.008, b_scale=2.0,
                 max_iter=120_000, batch_size=4, learning_rate=2e-4, weight_decay=1e-4,
                 lambda_l1=2.0, lambda_giou=5.0, lambda_bce=1.0, conf_iou_gate=None, sampling_steps=4,
                 lambda_conf=0.5, use_nms=True, nms_iou=0.5, denoiser="mlp",
                 random_state=0, verbose=0):
        self.padding = padding
        self.n_boxes = n_boxes
        self.lambda_scale = lambda_scale
        self.loss_target = loss_target
        self.timesteps = timesteps
        self.s_offset = s_offset
        self.b_scale = b_scale
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.lambda_l1 = lambda_l1
        self.lambda_giou = lambda_giou
        self.lambda_bce = lambda_bce
        self.conf_iou_gate = conf_iou_gate
        self.sampling_steps = sampling_steps
        self.lambda_conf = lambda_conf
        self.use_nms = use_nms
        self.nms_iou = nms_iou
        self.denoiser = denoiser
        self.random_state = random_state
        self.verbose = verbose

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            padding=PaddingConfig(self.padding, int(self.n_boxes), float(self.lambda_scale)),
            weights=CostWeights(float(self.lambda_l1), float(self.lambda_giou), float(self.lambda_bce)),
            T=int(self.timesteps),
            s_offset=float(self.s_offset),
            b_scale=float(self.b_scale),
            iterations=int(self.max_iter),
            batch_size=int(self.batch_size),
            seed=check_random_state_seed(self.random_state),
            loss_target=self.loss_target,
            lr=float(self.learning_rate),
            weight_decay=float(self.weight_decay),
            conf_iou_gate=None if self.conf_iou_gate is None else float(self.conf_iou_gate),
        )

    def infer_config(self) -> InferConfig:
        return InferConfig(
            steps=int(self.sampling_steps),
            lambda_conf=float(self.lambda_conf),
            N=int(self.n_boxes),
            seed=check_random_state_seed(self.random_state),
            use_nms=bool(self.use_nms),
            nms_iou=float(self.nms_iou),
        )

    def validate_params(self):
        """Raise ``ValueError`` for any invalid hyperparameter before work starts."""
        if self.denoiser not in DENOISERS:
            raise ValueError(f"denoiser must be one of {DENOISERS}, got {self.denoiser!r}")
        cfg = self.train_config()
        cosine_schedule(cfg.T, cfg.s_offset)
        icfg = self.infer_config()
        if icfg.steps > cfg.T:
            raise ValueError(f"sampling_steps ({icfg.steps}) cannot exceed timesteps ({cfg.T})")
        return cfg, icfg

    def fit(self, X, y, callback=None):
        cfg, _ = self.validate_params()
        X = check_images(X)
        y = check_box_lists(y, len(X))
        self.image_shape_ = X.shape[1:]
        self.schedule_ = cosine_schedule(cfg.T, cfg.s_offset)
        if self.denoiser == "oracle":
            self.params_ = None
            self.loss_curve_ = np.zeros(0)
            self.n_iter_ = 0
            return self
        samples = [PreparedSample.from_image(img, boxes) for img, boxes in zip(X, y)]
        if self.verbose:
            every = max(cfg.iterations // 20, 1)

            def report(it, loss):
                if callback is not None:
                    callback(it, loss)
                if it % every == 0 or it == cfg.iterations - 1:
                    log.info("iteration %d/%d loss %.4f", it + 1, cfg.iterations, loss)
        else:
            report = callback
        self.params_, self.optimizer_state_, self.loss_curve_ = train_loop(samples, cfg, callback=report)
        self.n_iter_ = cfg.iterations
        return self

    def _denoiser(self):
        if self.denoiser == "oracle":
            return OracleDenoiser(float(self.b_scale))
        check_is_fitted(self, "params_")
        return MlpDenoiser(self.params_, int(self.timesteps), float(self.b_scale))

    def predict_image(self, image, index: int = 0, gt_boxes=None):
        """Detections for a single image; ``index`` selects its random stream."""
        _, icfg = self.validate_params()
        image = check_images(image)[0]
        H, W = image.shape
        gt_unit = None if gt_boxes is None else to_unit(np.asarray(gt_boxes).reshape(-1, 4), W, H)
        sched = getattr(self, "schedule_", None) or cosine_schedule(int(self.timesteps), float(self.s_offset))
        windows = PreparedSample.from_image(image, np.zeros((0, 4))).windows
        rng = np.random.default_rng([icfg.seed, index])
        boxes, scores = infer_image(self._denoiser(), windows, icfg, sched, rng,
                                    gt_boxes=gt_unit, b_scale=float(self.b_scale))
        return to_pixels(boxes, W, H), scores

    def predict(self, X, gt_boxes=None, threads: int = 1):
        """List of ``(boxes, scores)`` per image, boxes in pixel coordinates."""
        X = check_images(X)
        if gt_boxes is not None:
            gt_boxes = check_box_lists(gt_boxes, len(X))
        elif self.denoiser == "oracle":
            raise ValueError("the oracle denoiser needs gt_boxes at predict time")

        def one(i):
            return self.predict_image(X[i], i, None if gt_boxes is None else gt_boxes[i])

        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(threads) as pool:
                return list(pool.map(one, range(len(X))))
        return [one(i) for i in range(len(X))]

    def score(self, X, y, gt_boxes=None):
        """Average sensitivity at 0.5, 1, 2 and 4 false positives per image."""
        y = check_box_lists(y, len(check_images(X)))
        preds = self.predict(X, gt_boxes=y if self.denoiser == "oracle" else gt_boxes)
        report = evaluate({i: p for i, p in enumerate(preds)}, {i: b for i, b in enumerate(y)})
        return report["average_sensitivity"]


class BoxPadder(TransformerMixin, BaseEstimator):
    """Pad each image's GT boxes (unit coordinates) to exactly ``n_boxes`` targets.

    ``transform`` returns an array of shape ``(n_images, n_boxes, 4)``;
    ``origins_`` keeps the matching GT indices from the last call.
    """

    def __init__(self, strategy="center_aligned", n_boxes=300, lambda_scale=0.4, random_state=0):
        self.strategy = strategy
        self.n_boxes = n_boxes
        self.lambda_scale = lambda_scale
        self.random_state = random_state

    def fit(self, X, y=None):
        self.config_ = PaddingConfig(self.strategy, int(self.n_boxes), float(self.lambda_scale))
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        seed = check_random_state_seed(self.random_state)
        out, origins = [], []
        for i, boxes in enumerate(X):
            padded = pad_targets(boxes, self.config_, np.random.default_rng([seed, i]))
            out.append(padded.boxes)
            origins.append(padded.origin)
        self.origins_ = np.stack(origins) if origins else np.zeros((0, self.config_.N), dtype=np.int64)
        return np.stack(out) if out else np.zeros((0, self.config_.N, 4))


class WindowTransformer(TransformerMixin, BaseEstimator):
    """Map HU-like images ``(n, H, W)`` to stacked window channels ``(n, C, H, W)``."""

    def __init__(self, windows=tuple(WINDOWS.values())):
        self.windows = windows

    def fit(self, X, y=None):
        for width, _level in self.windows:
            if width <= 0:
                raise ValueError("window widths must be positive")
        self.n_channels_ = len(self.windows)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_channels_")
        X = check_images(X)
        return np.stack([np.stack([window_transform(img, w, lv) for w, lv in self.windows]) for img in X])
