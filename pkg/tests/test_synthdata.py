import numpy as np
import pytest

from lesiondiff.synthdata import (
    LESION_COUNT_WEIGHTS,
    WINDOWS,
    Lesion,
    ellipse_bbox,
    generate_dataset,
    generate_sample,
    lesion_mask,
    multi_window,
    read_dataset,
    window_transform,
    write_dataset,
)


@pytest.mark.parametrize(
    "theta, halves",
    [(0.0, (10, 5)), (np.pi / 2, (5, 10)), (np.pi / 4, (np.sqrt(62.5), np.sqrt(62.5)))],
)
def test_ellipse_bbox(theta, halves):
    box = ellipse_bbox(Lesion(50, 40, 10, 5, theta, 200))
    np.testing.assert_allclose([50 - box[0], 40 - box[1], box[2] - 50, box[3] - 40],
                               [halves[0], halves[1], halves[0], halves[1]], atol=1e-12)


def test_ellipse_bbox_against_boundary_sampling():
    rng = np.random.default_rng(0)
    for _ in range(20):
        les = Lesion(0.0, 0.0, rng.uniform(4, 20), rng.uniform(4, 20), rng.uniform(0, np.pi), 100)
        phi = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
        c, s = np.cos(les.theta), np.sin(les.theta)
        x = les.a * np.cos(phi) * c - les.b * np.sin(phi) * s
        y = les.a * np.cos(phi) * s + les.b * np.sin(phi) * c
        box = ellipse_bbox(les)
        np.testing.assert_allclose([x.min(), y.min(), x.max(), y.max()], box, atol=1e-4)


def test_generation_deterministic():
    a = generate_sample(np.random.default_rng([4, 2]))
    b = generate_sample(np.random.default_rng([4, 2]))
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.gt_boxes, b.gt_boxes)


def test_lesion_count_distribution():
    n = 10_000
    counts = np.bincount(
        [len(generate_sample(np.random.default_rng([77, i]), size=64).gt_boxes) for i in range(n)],
        minlength=4,
    )
    np.testing.assert_allclose(counts / n, LESION_COUNT_WEIGHTS, atol=0.02)


def test_gt_boxes_are_tight():
    for s in generate_dataset(200, seed=3):
        assert len(s.lesions) == len(s.gt_boxes)
        for les, box in zip(s.lesions, s.gt_boxes):
            assert les.a >= 4 and les.b >= 4
            assert box[0] >= 0 and box[1] >= 0 and box[2] <= 128 and box[3] <= 128
            ys, xs = np.nonzero(lesion_mask(les, s.image.shape))
            # every lesion pixel center lies inside the box
            assert (xs + 0.5).min() >= box[0] and (xs + 0.5).max() <= box[2]
            assert (ys + 0.5).min() >= box[1] and (ys + 0.5).max() <= box[3]
            # and the outermost lesion pixels reach the box edges to within 1 px
            assert abs(xs.min() - box[0]) <= 1 and abs(xs.max() + 1 - box[2]) <= 1
            assert abs(ys.min() - box[1]) <= 1 and abs(ys.max() + 1 - box[3]) <= 1


def test_lesions_do_not_overlap_much():
    from lesiondiff.geometry import pairwise_iou

    for s in generate_dataset(300, seed=8):
        if len(s.gt_boxes) > 1:
            m = pairwise_iou(s.gt_boxes, s.gt_boxes)
            np.fill_diagonal(m, 0)
            assert m.max() <= 0.2


def test_window_transform():
    assert window_transform(np.array([50.0]), 400, 50)[0] == 0.5
    assert window_transform(np.array([-150.0, -1000.0]), 400, 50).tolist() == [0.0, 0.0]
    assert window_transform(np.array([250.0, 900.0]), 400, 50).tolist() == [1.0, 1.0]
    assert window_transform(np.array([-600.0]), *WINDOWS["chest"])[0] == 0.5
    assert window_transform(np.array([50.0]), *WINDOWS["soft_tissue"])[0] == 0.5
    assert window_transform(np.array([30.0]), *WINDOWS["abdomen"])[0] == 0.5
    v = np.linspace(-2000, 2000, 4001)
    for w, lv in WINDOWS.values():
        out = window_transform(v, w, lv)
        assert np.all(np.diff(out) >= 0) and out.min() >= 0 and out.max() <= 1


def test_windows_are_informative_on_synthetic_data():
    s = next(s for s in generate_dataset(20, seed=1) if len(s.gt_boxes))
    ch = multi_window(s.image)
    for c in ch:
        assert c.std() > 0


def test_dataset_round_trip(tmp_path):
    samples = generate_dataset(10, seed=5)
    manifest = write_dataset(tmp_path, samples, seed=5)
    assert manifest["count"] == 10
    m2, back = read_dataset(tmp_path)
    assert m2 == manifest
    for a, b in zip(samples, back):
        assert a.image.tobytes() == b.image.tobytes()
        np.testing.assert_array_equal(a.gt_boxes, b.gt_boxes)
        assert a.lesions == b.lesions and a.image_id == b.image_id


def test_empty_dataset_round_trip(tmp_path):
    write_dataset(tmp_path, [], seed=0, size=64)
    manifest, samples = read_dataset(tmp_path)
    assert manifest["count"] == 0 and samples == []


def test_truncated_raster_is_reported(tmp_path):
    write_dataset(tmp_path, generate_dataset(3, seed=0), seed=0)
    raster = tmp_path / "images.f32"
    raster.write_bytes(raster.read_bytes()[:-4])
    with pytest.raises(ValueError, match=r"expected 196608 bytes .* found 196604"):
        read_dataset(tmp_path)
