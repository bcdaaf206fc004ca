"""Per-cluster foreground location priors and threshold masks."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .core import Box


def foreground_prior(boxes: list[Box], frame_size: tuple[int, int]) -> np.ndarray:
    """Uniformly weighted coverage of a cluster's boxes: per-pixel count of
    covering boxes divided by the cluster size, in [0, 1]."""
    if not boxes:
        raise ValueError("need at least one box")
    width, height = frame_size
    counts = np.zeros((height, width), dtype=np.float64)
    for b in boxes:
        c = b.clamped(width, height)
        counts[c.y:c.y2, c.x:c.x2] += 1.0
    return (counts / len(boxes)).astype(np.float32)


def prior_mask(prior: np.ndarray, threshold: float = 0.5,
               keep_largest: bool = True) -> np.ndarray:
    """Binary foreground mask from a location prior.

    Pixels strictly above the threshold are foreground; optionally only the
    largest 8-connected component is retained.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    mask = np.asarray(prior) > threshold
    if keep_largest and mask.any():
        labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=np.int8))
        if n > 1:
            sizes = ndimage.sum_labels(mask, labels, index=np.arange(1, n + 1))
            mask = labels == (int(np.argmax(sizes)) + 1)
    return mask
