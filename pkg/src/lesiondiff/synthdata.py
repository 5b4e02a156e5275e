"""Synthetic CT-like slices with elliptical lesions and exact bounding boxes."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import iou

GENERATOR_VERSION = 1
MANIFEST_NAME = "manifest.json"
RASTER_NAME = "images.f32"
RASTER_DTYPE = np.dtype("<f4")

LESION_COUNT_WEIGHTS = (0.1, 0.5, 0.3, 0.1)  # P(0), P(1), P(2), P(3) lesions
SEMI_AXIS_RANGE = (5.0, 12.0)  # pixels
INTENSITY_RANGE = (100.0, 400.0)
BACKGROUND_HU = -200.0
GRADIENT_MAX = 100.0
NOISE_STD = 30.0
MAX_OVERLAP_IOU = 0.2
MAX_PLACEMENT_TRIES = 1000

# (width, level) pairs
WINDOWS = {
    "chest": (1200.0, -600.0),
    "soft_tissue": (400.0, 50.0),
    "abdomen": (200.0, 30.0),
}


@dataclass(frozen=True)
class Lesion:
    cx: float
    cy: float
    a: float
    b: float
    theta: float
    intensity: float


@dataclass
class Sample:
    image: np.ndarray  # (H, W) float32 HU-like values
    gt_boxes: np.ndarray  # (k, 4) pixel coordinates
    image_id: str
    lesions: list = field(default_factory=list)


def ellipse_bbox(lesion: Lesion) -> np.ndarray:
    """Tight pixel-space box around the rotated ellipse."""
    c, s = np.cos(lesion.theta), np.sin(lesion.theta)
    hw = np.sqrt((lesion.a * c) ** 2 + (lesion.b * s) ** 2)
    hh = np.sqrt((lesion.a * s) ** 2 + (lesion.b * c) ** 2)
    return np.array([lesion.cx - hw, lesion.cy - hh, lesion.cx + hw, lesion.cy + hh])


def lesion_mask(lesion: Lesion, shape) -> np.ndarray:
    """Pixels whose centers fall inside the ellipse."""
    H, W = shape
    ys, xs = np.mgrid[0:H, 0:W]
    dx = xs + 0.5 - lesion.cx
    dy = ys + 0.5 - lesion.cy
    c, s = np.cos(lesion.theta), np.sin(lesion.theta)
    u = (dx * c + dy * s) / lesion.a
    v = (-dx * s + dy * c) / lesion.b
    return u * u + v * v <= 1.0


def _draw_lesion(rng: np.random.Generator, size: int) -> Lesion:
    a, b = rng.uniform(*SEMI_AXIS_RANGE, size=2)
    theta = rng.uniform(0.0, np.pi)
    c, s = np.cos(theta), np.sin(theta)
    hw = np.sqrt((a * c) ** 2 + (b * s) ** 2)
    hh = np.sqrt((a * s) ** 2 + (b * c) ** 2)
    cx = rng.uniform(hw + 1, size - hw - 1)
    cy = rng.uniform(hh + 1, size - hh - 1)
    return Lesion(float(cx), float(cy), float(a), float(b), float(theta),
                  float(rng.uniform(*INTENSITY_RANGE)))


def generate_sample(rng: np.random.Generator, size: int = 128, image_id: str = "") -> Sample:
    count = int(rng.choice(len(LESION_COUNT_WEIGHTS), p=LESION_COUNT_WEIGHTS))
    lesions: list[Lesion] = []
    boxes: list[np.ndarray] = []
    for _ in range(count):
        for _ in range(MAX_PLACEMENT_TRIES):
            les = _draw_lesion(rng, size)
            box = ellipse_bbox(les)
            if all(iou(box, other) <= MAX_OVERLAP_IOU for other in boxes):
                break
        else:
            raise RuntimeError("could not place a non-overlapping lesion")
        lesions.append(les)
        boxes.append(box)

    angle = rng.uniform(0.0, 2 * np.pi)
    amp = rng.uniform(0.0, GRADIENT_MAX)
    ys, xs = np.mgrid[0:size, 0:size] / (size - 1) - 0.5
    image = BACKGROUND_HU + amp * (np.cos(angle) * xs + np.sin(angle) * ys)
    image = image + rng.normal(0.0, NOISE_STD, size=(size, size))
    for les in lesions:
        image[lesion_mask(les, (size, size))] += les.intensity
    gt = np.array(boxes, dtype=np.float64).reshape(-1, 4)
    return Sample(image.astype(np.float32), gt, image_id, lesions)


def generate_dataset(count: int, seed: int, size: int = 128) -> list[Sample]:
    """``count`` samples; sample ``i`` draws from its own ``(seed, i)`` stream."""
    return [generate_sample(np.random.default_rng([seed, i]), size, f"img{i:05d}")
            for i in range(count)]


def window_transform(image, width: float, level: float) -> np.ndarray:
    lo = level - width / 2.0
    return np.clip((np.asarray(image, dtype=np.float64) - lo) / width, 0.0, 1.0)


def multi_window(image) -> np.ndarray:
    """Stack of the three organ windows, shape ``(3, H, W)``."""
    return np.stack([window_transform(image, w, lv) for w, lv in WINDOWS.values()])


def write_dataset(out_dir, samples, seed: int, size: int | None = None) -> dict:
    """Write ``manifest.json`` plus a concatenated little-endian float32 raster."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if size is None:
        size = samples[0].image.shape[0] if samples else 128
    entries = []
    offset = 0
    with open(out / RASTER_NAME, "wb") as fh:
        for s in samples:
            if s.image.shape != (size, size):
                raise ValueError(f"{s.image_id}: image shape {s.image.shape} != {(size, size)}")
            buf = np.ascontiguousarray(s.image, dtype=RASTER_DTYPE).tobytes()
            fh.write(buf)
            entries.append({
                "image_id": s.image_id,
                "offset": offset,
                "gt_boxes": np.asarray(s.gt_boxes, dtype=np.float64).reshape(-1, 4).tolist(),
                "lesions": [asdict(les) for les in s.lesions],
            })
            offset += len(buf)
    manifest = {
        "format": "lesiondiff-dataset",
        "generator_version": GENERATOR_VERSION,
        "image_size": [size, size],
        "count": len(samples),
        "seed": seed,
        "raster": RASTER_NAME,
        "raster_dtype": "float32-le",
        "raster_bytes": offset,
        "samples": entries,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def read_dataset(data_dir) -> tuple[dict, list[Sample]]:
    d = Path(data_dir)
    mpath = d / MANIFEST_NAME
    if not mpath.is_file():
        raise FileNotFoundError(f"no dataset manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("generator_version") != GENERATOR_VERSION:
        raise ValueError(
            f"{mpath}: generator version {manifest.get('generator_version')!r}, "
            f"expected {GENERATOR_VERSION}"
        )
    H, W = manifest["image_size"]
    per_image = H * W * RASTER_DTYPE.itemsize
    expected = per_image * manifest["count"]
    raw = (d / manifest["raster"]).read_bytes()
    if len(raw) != expected:
        raise ValueError(
            f"{d / manifest['raster']}: expected {expected} bytes for "
            f"{manifest['count']} images of {H}x{W}, found {len(raw)}"
        )
    samples = []
    for e in manifest["samples"]:
        img = np.frombuffer(raw, dtype=RASTER_DTYPE, count=H * W, offset=e["offset"]).reshape(H, W)
        samples.append(Sample(
            img.astype(np.float32),
            np.asarray(e["gt_boxes"], dtype=np.float64).reshape(-1, 4),
            e["image_id"],
            [Lesion(**les) for les in e["lesions"]],
        ))
    return manifest, samples
