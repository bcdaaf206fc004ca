import numpy as np
import pytest

from streamdet.core import Box
from streamdet.segmentation import foreground_prior, prior_mask


def test_single_box_prior():
    prior = foreground_prior([Box(2, 3, 4, 5)], (12, 10))
    assert prior.shape == (10, 12)
    assert np.all(prior[3:8, 2:6] == 1.0)
    prior[3:8, 2:6] = 0.0
    assert np.all(prior == 0.0)


def test_duplicate_boxes_same_prior():
    b = Box(1, 1, 5, 5)
    one = foreground_prior([b], (8, 8))
    two = foreground_prior([b, b], (8, 8))
    assert np.array_equal(one, two)


def test_half_overlap_prior_values():
    a = Box(0, 0, 8, 4)
    b = Box(4, 0, 8, 4)
    prior = foreground_prior([a, b], (12, 4))
    assert np.all(prior[:, 4:8] == 1.0)
    assert np.all(prior[:, 0:4] == 0.5)
    assert np.all(prior[:, 8:12] == 0.5)


def test_prior_requires_boxes():
    with pytest.raises(ValueError):
        foreground_prior([], (4, 4))


def test_mask_threshold_half_keeps_intersection():
    a = Box(0, 0, 8, 4)
    b = Box(4, 0, 8, 4)
    prior = foreground_prior([a, b], (12, 4))
    mask = prior_mask(prior, 0.5)
    expect = np.zeros((4, 12), dtype=bool)
    expect[:, 4:8] = True
    assert np.array_equal(mask, expect)


def test_mask_empty_prior():
    assert not prior_mask(np.zeros((6, 6), dtype=np.float32), 0.5).any()


def test_mask_threshold_validation():
    with pytest.raises(ValueError):
        prior_mask(np.zeros((4, 4)), 0.0)
    with pytest.raises(ValueError):
        prior_mask(np.zeros((4, 4)), 1.0)


def test_mask_support_shrinks_with_threshold():
    rng = np.random.default_rng(0)
    boxes = [Box(int(rng.integers(0, 20)), int(rng.integers(0, 20)),
                 int(rng.integers(4, 12)), int(rng.integers(4, 12)))
             for _ in range(12)]
    prior = foreground_prior(boxes, (32, 32))
    sizes = [prior_mask(prior, t, keep_largest=False).sum()
             for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


def test_mask_keeps_largest_component():
    prior = np.zeros((10, 20), dtype=np.float32)
    prior[1:3, 1:3] = 1.0       # 4 px blob
    prior[4:9, 8:18] = 1.0      # 50 px blob
    mask = prior_mask(prior, 0.5)
    assert mask.sum() == 50
    assert mask[5, 10]
    assert not mask[1, 1]


def test_tight_cluster_mask_matches_object():
    # jittered tight boxes around a 20x14 object recover its mask
    rng = np.random.default_rng(1)
    gt = Box(20, 10, 20, 14)
    boxes = []
    for _ in range(30):
        dx, dy = rng.integers(-2, 3, 2)
        dw, dh = rng.integers(-2, 3, 2)
        boxes.append(Box(gt.x + dx, gt.y + dy, gt.w + dw, gt.h + dh))
    prior = foreground_prior(boxes, (64, 48))
    mask = prior_mask(prior, 0.5)
    gt_mask = np.zeros((48, 64), dtype=bool)
    gt_mask[gt.y:gt.y2, gt.x:gt.x2] = True
    inter = (mask & gt_mask).sum()
    union = (mask | gt_mask).sum()
    assert inter / union >= 0.5


def test_loose_boxes_fail_demonstration():
    # loosely scattered boxes do not reproduce the object mask
    rng = np.random.default_rng(2)
    gt = Box(20, 10, 20, 14)
    boxes = []
    for _ in range(30):
        dx, dy = rng.integers(-12, 13, 2)
        dw, dh = rng.integers(-6, 15, 2)
        boxes.append(Box(gt.x + dx, gt.y + dy, max(4, gt.w + dw),
                         max(4, gt.h + dh)).clamped(64, 48))
    prior = foreground_prior(boxes, (64, 48))
    mask = prior_mask(prior, 0.5)
    gt_mask = np.zeros((48, 64), dtype=bool)
    gt_mask[gt.y:gt.y2, gt.x:gt.x2] = True
    union = (mask | gt_mask).sum()
    inter = (mask & gt_mask).sum()
    tight_case_iou = inter / union if union else 0.0
    assert tight_case_iou < 0.5  # the documented failure regime
