"""Spatial edge detection, spatio-temporal edge combination and edge grouping."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import Box, as_field

# Scharr 3x3 derivative stencil; scale cancels after normalization.
_SCHARR_X = np.array([[-3, 0, 3], [-10, 0, 10], [-3, 0, 3]], dtype=np.float64) / 32.0
_SCHARR_Y = _SCHARR_X.T


def to_gray(frame) -> np.ndarray:
    """Luma in [0, 1] from an RGB or grayscale frame (uint8 or float)."""
    arr = np.asarray(frame)
    if arr.ndim == 3:
        arr = arr.astype(np.float64)
        arr = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    else:
        arr = arr.astype(np.float64)
    if arr.max() > 1.0:
        arr = arr / 255.0
    return arr.astype(np.float32)


def _convolve3(field, kernel):
    from scipy.ndimage import convolve
    return convolve(field.astype(np.float64), kernel, mode="nearest")


def spatial_edge(frame, sigma: float = 1.5):
    """Gradient-magnitude edge map of a frame plus per-pixel edge orientation.

    Returns (magnitude, orientation): magnitude is normalized to [0, 1],
    orientation is the gradient (edge normal) angle in [0, pi).
    """
    gray = to_gray(frame)
    smooth = gaussian_filter(gray.astype(np.float64), sigma, mode="nearest")
    gx = _convolve3(smooth, _SCHARR_X)
    gy = _convolve3(smooth, _SCHARR_Y)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    orient = np.mod(np.arctan2(gy, gx), np.pi)
    return mag.astype(np.float32), orient.astype(np.float32)


def orientation_of(field, sigma: float = 1.5) -> np.ndarray:
    """Gradient-direction angles in [0, pi) for an arbitrary scalar field."""
    smooth = gaussian_filter(np.asarray(field, dtype=np.float64), sigma, mode="nearest")
    gx = _convolve3(smooth, _SCHARR_X)
    gy = _convolve3(smooth, _SCHARR_Y)
    return np.mod(np.arctan2(gy, gx), np.pi).astype(np.float32)


def combine_edges(es, et, lam: float) -> np.ndarray:
    """Pointwise convex combination lam * et + (1 - lam) * es."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    es = as_field(es)
    et = as_field(et)
    if es.shape != et.shape:
        raise ValueError(f"edge maps disagree in shape: {es.shape} vs {et.shape}")
    return (lam * et + (1.0 - lam) * es).astype(np.float32)


def combined_orientation(es, et, orient_s, orient_t, lam: float) -> np.ndarray:
    """Per-pixel orientation for a combined map: winner between the two sources."""
    use_t = lam * np.asarray(et) > (1.0 - lam) * np.asarray(es)
    return np.where(use_t, orient_t, orient_s).astype(np.float32)


@dataclass
class EdgeGroup:
    """Connected set of edge pixels with coherent orientation."""

    pixels: np.ndarray      # (n, 2) int32 rows of (y, x)
    magnitudes: np.ndarray  # (n,) float32 per-pixel magnitude
    magnitude: float        # aggregate magnitude (sum of members)
    orientation: float      # circular mean orientation mod pi
    bbox: Box


def _orient_diff(a: float, b: float) -> float:
    d = abs(a - b) % np.pi
    return min(d, np.pi - d)


def edge_groups(edge_map, orientations, magnitude_threshold: float = 0.1) -> list[EdgeGroup]:
    """Partition supra-threshold edge pixels into orientation-coherent groups.

    8-connected components are grown breadth-first from scan order; growth
    stops a branch once the orientation change accumulated from the seed
    reaches pi/2, so sharp corners split into separate groups.
    """
    E = as_field(edge_map)
    O = np.asarray(orientations, dtype=np.float64)
    if O.shape != E.shape:
        raise ValueError("orientation field must match the edge map")
    h, w = E.shape
    mask = E >= magnitude_threshold
    labels = np.full((h, w), -1, dtype=np.int32)
    groups: list[EdgeGroup] = []
    # tolerance absorbs float32 rounding so a clean right-angle corner splits
    limit = np.pi / 2 - 1e-6

    ys, xs = np.nonzero(mask)
    for y0, x0 in zip(ys.tolist(), xs.tolist()):
        if labels[y0, x0] >= 0:
            continue
        gid = len(groups)
        labels[y0, x0] = gid
        members = [(y0, x0)]
        queue = deque([(y0, x0, 0.0)])
        while queue:
            y, x, acc = queue.popleft()
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dy == 0 and dx == 0:
                        continue
                    ny, nx = y + dy, x + dx
                    if ny < 0 or nx < 0 or ny >= h or nx >= w:
                        continue
                    if not mask[ny, nx] or labels[ny, nx] >= 0:
                        continue
                    nacc = acc + _orient_diff(O[y, x], O[ny, nx])
                    if nacc >= limit:
                        continue
                    labels[ny, nx] = gid
                    members.append((ny, nx))
                    queue.append((ny, nx, nacc))
        pix = np.array(members, dtype=np.int32)
        mags = E[pix[:, 0], pix[:, 1]].astype(np.float32)
        angles = O[pix[:, 0], pix[:, 1]]
        # magnitude-weighted circular mean over doubled angles
        c = float(np.sum(mags * np.cos(2 * angles)))
        s = float(np.sum(mags * np.sin(2 * angles)))
        mean_orient = float(np.mod(0.5 * np.arctan2(s, c), np.pi))
        y_min, x_min = pix.min(axis=0)
        y_max, x_max = pix.max(axis=0)
        bbox = Box(int(x_min), int(y_min), int(x_max - x_min + 1), int(y_max - y_min + 1))
        groups.append(EdgeGroup(pix, mags, float(mags.sum(dtype=np.float64)),
                                mean_orient, bbox))
    return groups
