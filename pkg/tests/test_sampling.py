import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixmatch.data import IGNORE_LABEL, LabeledImage, Rect, RunConfig, make_synthetic
from mixmatch.sampling import (EmptyBatchError, central_label, rect_iou, resize_bilinear,
                               sample_patches)


def cell_iou(a: Rect, b: Rect) -> float:
    """Oracle: count covered unit cells."""
    ca = {(x, y) for x in range(a.x, a.x + a.w) for y in range(a.y, a.y + a.h)}
    cb = {(x, y) for x in range(b.x, b.x + b.w) for y in range(b.y, b.y + b.h)}
    return len(ca & cb) / len(ca | cb)


rects = st.builds(Rect, st.integers(0, 12), st.integers(0, 12), st.integers(1, 8),
                  st.integers(1, 8))


def test_iou_examples():
    r = Rect(2, 3, 4, 5)
    assert rect_iou(r, r) == 1.0
    assert rect_iou(Rect(0, 0, 2, 2), Rect(5, 5, 2, 2)) == 0.0
    assert rect_iou(Rect(0, 0, 2, 2), Rect(2, 0, 2, 2)) == 0.0  # touching edges
    assert rect_iou(Rect(0, 0, 2, 2), Rect(1, 0, 2, 2)) == pytest.approx(2 / 6)
    assert cell_iou(Rect(0, 0, 2, 2), Rect(1, 0, 2, 2)) == pytest.approx(2 / 6)


@given(rects, rects)
def test_iou_matches_cell_enumeration(a, b):
    assert rect_iou(a, b) == pytest.approx(cell_iou(a, b))


@given(rects, rects)
def test_iou_symmetric_bounded_and_one_iff_identical(a, b):
    v = rect_iou(a, b)
    assert v == rect_iou(b, a)
    assert 0.0 <= v <= 1.0
    assert (v == 1.0) == (a == b)


def test_central_label_uses_floor_of_half_extent():
    labels = np.arange(64).reshape(8, 8)
    im = LabeledImage(np.zeros((8, 8, 3)), labels)
    assert central_label(im, Rect(3, 4, 1, 1)) == labels[4, 3]
    assert central_label(im, Rect(0, 0, 4, 4)) == labels[2, 2]
    assert central_label(im, Rect(1, 2, 3, 5)) == labels[2 + 2, 1 + 1]


def test_resize_preserves_constant_and_shape():
    block = np.full((13, 7, 3), 0.25)
    out = resize_bilinear(block, 32)
    assert out.shape == (32, 32, 3)
    np.testing.assert_allclose(out, 0.25)


def test_resize_matches_per_pixel_formula():
    rng = np.random.default_rng(0)
    block = rng.random((9, 6, 2))
    size = 5
    out = resize_bilinear(block, size)
    for i, j in itertools.product(range(size), repeat=2):
        y = min(max((i + 0.5) * 9 / size - 0.5, 0), 8)
        x = min(max((j + 0.5) * 6 / size - 0.5, 0), 5)
        y0, x0 = int(y), int(x)
        y1, x1 = min(y0 + 1, 8), min(x0 + 1, 5)
        fy, fx = y - y0, x - x0
        ref = ((1 - fy) * ((1 - fx) * block[y0, x0] + fx * block[y0, x1])
               + fy * ((1 - fx) * block[y1, x0] + fx * block[y1, x1]))
        np.testing.assert_allclose(out[i, j], ref, atol=1e-12)


def test_full_acceptance_gives_sixteen_by_ten():
    imgs = make_synthetic(16, 4, (64, 64), seed=3)
    cfg = RunConfig(overlap_iou_max=1.0, patch_resize=8)
    batch = sample_patches(imgs, cfg, 0)
    assert len(batch) == 160
    assert batch.per_image_counts == [10] * 16


@pytest.mark.parametrize("n_images,nodes", [(10, 100), (20, 200), (40, 400)])
def test_node_counts_scale_with_batch(n_images, nodes):
    imgs = make_synthetic(n_images, 4, (48, 48), seed=n_images)
    batch = sample_patches(imgs, RunConfig(overlap_iou_max=1.0, patch_resize=4), 1)
    assert len(batch) == nodes


def test_identical_candidate_rejected_at_any_threshold_below_one():
    # a 1x1 image offers exactly one placement; every retry repeats the same rect
    im = LabeledImage(np.zeros((1, 1, 3)), np.zeros((1, 1), dtype=int))
    cfg = RunConfig(patches_per_image=5, overlap_iou_max=0.99, patch_resize=2)
    assert sample_patches([im], cfg, 0).per_image_counts == [1]


def test_all_ignore_image_contributes_nothing():
    ok = make_synthetic(1, 3, (32, 32), seed=0)[0]
    ignored = LabeledImage(np.zeros((32, 32, 3)), np.full((32, 32), IGNORE_LABEL))
    batch = sample_patches([ignored, ok], RunConfig(patch_resize=8), 5)
    assert batch.per_image_counts[0] == 0 and batch.per_image_counts[1] > 0
    assert all(p.image_index == 1 for p in batch.patches)


def test_empty_batch_raises():
    ignored = LabeledImage(np.zeros((16, 16, 3)), np.full((16, 16), IGNORE_LABEL))
    with pytest.raises(EmptyBatchError):
        sample_patches([ignored, ignored], RunConfig(patch_resize=4), 0)


def test_patch_centres_never_ignore():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, size=(40, 40))
    labels[rng.random((40, 40)) < 0.5] = IGNORE_LABEL
    im = LabeledImage(rng.random((40, 40, 3)), labels)
    batch = sample_patches([im] * 4, RunConfig(patch_resize=6), 2)
    assert all(p.label != IGNORE_LABEL for p in batch.patches)
    for p in batch.patches:
        assert p.label == central_label(im, p.rect)


@pytest.mark.parametrize("seed", range(200))
def test_sampled_batches_respect_overlap_and_size(seed):
    rng = np.random.default_rng(seed)
    imgs = make_synthetic(int(rng.integers(1, 5)), 3, (int(rng.integers(16, 64)),) * 2, seed)
    cfg = RunConfig(overlap_iou_max=float(rng.uniform(0.05, 0.9)),
                    patch_resize=int(rng.integers(2, 12)),
                    patches_per_image=int(rng.integers(1, 12)))
    batch = sample_patches(imgs, cfg, seed)
    by_image = {}
    for p in batch.patches:
        assert p.pixels.shape == (cfg.patch_resize, cfg.patch_resize, 3)
        assert p.rect.fits(imgs[p.image_index].height, imgs[p.image_index].width)
        by_image.setdefault(p.image_index, []).append(p.rect)
    for rs in by_image.values():
        for a, b in itertools.combinations(rs, 2):
            assert rect_iou(a, b) <= cfg.overlap_iou_max


def test_sampling_is_deterministic_and_order_independent():
    imgs = make_synthetic(5, 3, (40, 40), seed=2)
    cfg = RunConfig(patch_resize=8)
    a = sample_patches(imgs, cfg, 11)
    b = sample_patches(imgs, cfg, 11)
    assert [p.rect for p in a.patches] == [p.rect for p in b.patches]
    np.testing.assert_array_equal(a.pixel_matrix(), b.pixel_matrix())
    # a generator seed is reduced to one base seed, so results stay reproducible
    g1 = sample_patches(imgs, cfg, np.random.default_rng(4))
    g2 = sample_patches(imgs, cfg, np.random.default_rng(4))
    assert [p.rect for p in g1.patches] == [p.rect for p in g2.patches]


def test_patch_side_range():
    imgs = make_synthetic(6, 3, (50, 50), seed=0)
    cfg = RunConfig(patch_scale_range=(0.2, 0.6), patch_resize=4, overlap_iou_max=1.0)
    sides = [p.rect.w for p in sample_patches(imgs, cfg, 0).patches]
    assert min(sides) >= 10 and max(sides) <= 30
    assert all(p.rect.w == p.rect.h for p in sample_patches(imgs, cfg, 0).patches)
