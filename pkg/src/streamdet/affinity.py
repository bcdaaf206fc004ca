"""Per-proposal features, joint density estimation over overlapping window
pairs, pointwise-mutual-information scores and the affinity matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Box, iou_matrix

HIST_BINS = 15
N_HIST = 3 * HIST_BINS          # 45 color dims
FEATURE_DIM = N_HIST + 4        # 49 total
DENSITY_EPS = 1e-12


class DensityError(ValueError):
    """Raised when too few overlapping pairs exist to fit a density model."""


@dataclass
class FeatureVector:
    """45-bin color histogram plus normalized (cx, cy, h, w) geometry."""

    color_hist: np.ndarray  # (45,), each 15-bin channel block sums to 1
    location: np.ndarray    # (4,) center x/y, height, width over frame dims

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.color_hist, self.location])


def extract_features(frame, box: Box) -> FeatureVector:
    """Channel-normalized color histograms and normalized box geometry."""
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("expected an RGB frame of shape (h, w, 3)")
    h, w = arr.shape[:2]
    if box.x < 0 or box.y < 0 or box.x2 > w or box.y2 > h:
        raise ValueError(f"box {box} outside {w}x{h} frame")
    patch = arr[box.y:box.y2, box.x:box.x2].reshape(-1, 3)
    if arr.dtype != np.uint8:
        patch = np.clip(patch, 0, 255).astype(np.uint8)
    hist = np.empty(N_HIST, dtype=np.float64)
    bins = (patch.astype(np.int64) * HIST_BINS) // 256
    for c in range(3):
        counts = np.bincount(bins[:, c], minlength=HIST_BINS).astype(np.float64)
        hist[c * HIST_BINS:(c + 1) * HIST_BINS] = counts / counts.sum()
    cx, cy = box.center
    location = np.array([cx / w, cy / h, box.h / h, box.w / w], dtype=np.float64)
    return FeatureVector(hist, location)


@dataclass
class PairSample:
    """One overlapping window pair: feature indices, overlap and its bin."""

    i: int
    j: int
    u: float
    u_bin: int


def collect_pairs(proposals, features: list[FeatureVector],
                  u_bins: int = 10) -> list[PairSample]:
    """All unordered index pairs with positive IoU across the sub-sequence.

    Pairs with zero overlap carry no weight and are skipped; the overlap u is
    quantized into u_bins uniform bins for bookkeeping.
    """
    if len(proposals) != len(features):
        raise ValueError("proposals and features must align")
    n = len(proposals)
    if n < 2:
        return []
    rects = np.array([p.box.as_tuple() for p in proposals], dtype=np.float64)
    overlaps = iou_matrix(rects, rects)
    pairs: list[PairSample] = []
    for i in range(n):
        row = overlaps[i, i + 1:]
        for off in np.nonzero(row > 0.0)[0]:
            j = i + 1 + int(off)
            u = float(row[off])
            u_bin = min(u_bins - 1, int(u * u_bins))
            pairs.append(PairSample(i, j, u, u_bin))
    return pairs


def silverman_bandwidths(samples: np.ndarray, dim: int | None = None,
                         floor: float = 1e-6) -> np.ndarray:
    """Per-dimension plug-in rule h_d = 2.34 * sigma_d * n^(-1/(4+dim))."""
    samples = np.asarray(samples, dtype=np.float64)
    n, d = samples.shape
    if dim is None:
        dim = d
    sigma = samples.std(axis=0, ddof=0)
    h = 2.34 * sigma * n ** (-1.0 / (4.0 + dim))
    return np.maximum(h, floor)


def kernel_factor_matrix(points: np.ndarray, samples: np.ndarray,
                         bandwidths: np.ndarray) -> np.ndarray:
    """(m, n) matrix of product-Epanechnikov kernel values K(points_i - samples_k),
    normalization included."""
    points = np.asarray(points, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    out = np.full((points.shape[0], samples.shape[0]),
                  np.prod(0.75 / bandwidths), dtype=np.float64)
    for dim in range(points.shape[1]):
        u = (points[:, dim, None] - samples[None, :, dim]) / bandwidths[dim]
        out *= np.clip(1.0 - u * u, 0.0, None)
    return out


class ProductKDE:
    """Product-Epanechnikov kernel density over stored samples.

    Each dimension uses kernel 0.75 * (1 - t^2) on |t| <= 1 with its own
    bandwidth, so evaluations are proper densities (they integrate to one)
    and marginals over trailing dimensions are again product KDEs.
    """

    def __init__(self, samples: np.ndarray, bandwidths: np.ndarray):
        self.samples = np.asarray(samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] == 0:
            raise ValueError("need a non-empty (n, d) sample matrix")
        self.bandwidths = np.asarray(bandwidths, dtype=np.float64)
        if self.bandwidths.shape != (self.samples.shape[1],):
            raise ValueError("one bandwidth per dimension required")
        self._norm = np.prod(0.75 / self.bandwidths)

    def evaluate(self, points: np.ndarray, budget: int = 1 << 24) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n, d = self.samples.shape
        chunk = max(1, budget // max(1, n))
        out = np.empty(points.shape[0], dtype=np.float64)
        for lo in range(0, points.shape[0], chunk):
            p = points[lo:lo + chunk]
            k = np.ones((p.shape[0], n), dtype=np.float64)
            for dim in range(d):
                u = (p[:, dim, None] - self.samples[None, :, dim]) / self.bandwidths[dim]
                k *= np.clip(1.0 - u * u, 0.0, None)
            out[lo:lo + chunk] = self._norm * k.sum(axis=1) / n
        return out


class FeatureProjector:
    """49-D feature -> 5-D: 4 normalized location dims plus one color
    coordinate from the first principal direction of the histograms."""

    def __init__(self, features: list[FeatureVector]):
        hists = np.array([f.color_hist for f in features], dtype=np.float64)
        self.hist_mean = hists.mean(axis=0)
        centered = hists - self.hist_mean
        if len(features) > 1 and np.any(centered):
            _, _, vt = np.linalg.svd(centered, full_matrices=False)
            comp = vt[0]
            if comp[np.argmax(np.abs(comp))] < 0:
                comp = -comp
        else:
            comp = np.zeros(hists.shape[1])
        self.color_axis = comp

    def project(self, features) -> np.ndarray:
        if isinstance(features, FeatureVector):
            features = [features]
        locs = np.array([f.location for f in features], dtype=np.float64)
        hists = np.array([f.color_hist for f in features], dtype=np.float64)
        color = (hists - self.hist_mean) @ self.color_axis
        return np.concatenate([locs, color[:, None]], axis=1)


@dataclass
class DensityModel:
    """Joint, product-of-marginals and marginal kernel densities over
    projected feature pairs."""

    projector: FeatureProjector
    joint: ProductKDE       # 10-D, symmetrized over pair order
    product: ProductKDE     # 10-D estimate of P(A) P(B): block-permuted pairs
    marginal: ProductKDE    # 5-D, shares the joint's per-dimension bandwidths
    n_pairs: int


def fit_density(pairs: list[PairSample], features: list[FeatureVector]) -> DensityModel:
    """Epanechnikov joint density over overlapping pairs in projected space.

    The sample set contains each pair in both orders, which makes the joint
    exchange-symmetric; the marginal reuses the first-block bandwidths so it
    is the exact marginal of the joint. The product-of-marginals density is
    estimated in the pair space from block-permuted samples: it shares the
    joint's dimensionality, bandwidths and smoothing bias, so the log ratio
    in the mutual-information score is centered at zero for independent
    features instead of inheriting the high-dimensional kernel bias.
    """
    if len(pairs) < 2:
        raise DensityError(
            f"need at least 2 overlapping pairs to fit a density, got "
            f"{len(pairs)}; fall back to a uniform affinity")
    projector = FeatureProjector(features)
    proj = projector.project(features)
    ii = np.fromiter((p.i for p in pairs), dtype=np.int64, count=len(pairs))
    jj = np.fromiter((p.j for p in pairs), dtype=np.int64, count=len(pairs))
    fwd = np.concatenate([proj[ii], proj[jj]], axis=1)
    bwd = np.concatenate([proj[jj], proj[ii]], axis=1)
    samples = np.concatenate([fwd, bwd], axis=0)
    bw = silverman_bandwidths(samples, dim=samples.shape[1])
    # symmetrize bandwidths across the two feature blocks
    half = proj.shape[1]
    bw_block = np.maximum(bw[:half], bw[half:])
    bw = np.concatenate([bw_block, bw_block])
    joint = ProductKDE(samples, bw)
    # decouple the blocks with several fixed derangements; pooling the rolls
    # smooths the independence baseline so it has no spurious coverage holes
    rolls = [r for r in (1, 3, 7, 13) if r % samples.shape[0] != 0] or [1]
    permuted = np.concatenate(
        [np.concatenate([samples[:, :half],
                         np.roll(samples[:, half:], r, axis=0)], axis=1)
         for r in rolls], axis=0)
    product = ProductKDE(permuted, bw)
    marginal = ProductKDE(samples[:, :half], bw_block)
    return DensityModel(projector, joint, product, marginal, len(pairs))


def _loo_correct(values: np.ndarray, kde: ProductKDE) -> np.ndarray:
    """Remove one self-kernel from density values evaluated at the KDE's own
    sample points: without this, a pair with no similar pairs still sees its
    own kernel peak and gets a spuriously confident joint density."""
    n = kde.samples.shape[0]
    if n <= 1:
        return values
    return np.maximum((n * values - kde._norm) / (n - 1), 0.0)


def pmi(model: DensityModel, a: FeatureVector, b: FeatureVector,
        rho: float = 1.2, exclude_self: bool = False) -> float:
    """log(P(A,B)^rho / (P(A) P(B))) with floored densities.

    The two arguments are put in a canonical order before evaluation, so the
    result is exactly exchange-symmetric. Set exclude_self when (a, b) is one
    of the pairs the model was fitted on.
    """
    pa, pb = model.projector.project([a, b])
    if tuple(pb) < tuple(pa):
        pa, pb = pb, pa
    joint_pt = np.concatenate([pa, pb])[None, :]
    pj = model.joint.evaluate(joint_pt)
    if exclude_self:
        pj = _loo_correct(pj, model.joint)
    pab = float(model.product.evaluate(joint_pt)[0])
    return float(rho * np.log(max(float(pj[0]), DENSITY_EPS))
                 - np.log(max(pab, DENSITY_EPS)))


def affinity_matrix(features: list[FeatureVector], model: DensityModel,
                    rho: float = 1.2) -> np.ndarray:
    """Symmetric non-negative W with W_ij = exp(PMI(f_i, f_j)) for pairs with
    positive overlap, 0 for non-overlapping pairs, and the row maximum on the
    diagonal."""
    n = len(features)
    if n < 2:
        raise ValueError("need at least 2 features")
    proj = model.projector.project(features)
    loc = np.array([f.location for f in features], dtype=np.float64)
    rects = np.stack([loc[:, 0] - loc[:, 3] / 2, loc[:, 1] - loc[:, 2] / 2,
                      loc[:, 3], loc[:, 2]], axis=1)
    overlaps = iou_matrix(rects, rects)
    iu, ju = np.triu_indices(n, k=1)
    keep = overlaps[iu, ju] > 0.0
    iu, ju = iu[keep], ju[keep]

    W = np.zeros((n, n), dtype=np.float64)
    if iu.size:
        # the product kernel factorizes over the two feature blocks, so all
        # pair evaluations reduce to kernel-factor matrices and two matmuls,
        # accumulated over sample chunks to bound memory
        half = proj.shape[1]
        n_samp = model.joint.samples.shape[0]
        bw_block = model.joint.bandwidths[:half]
        joint_all = np.zeros((n, n), dtype=np.float64)
        prod_all = np.zeros((n, n), dtype=np.float64)
        chunk = max(1, (1 << 22) // max(1, n))
        for lo_s in range(0, n_samp, chunk):
            sl = slice(lo_s, lo_s + chunk)
            ka = kernel_factor_matrix(proj, model.joint.samples[sl, :half], bw_block)
            kb = kernel_factor_matrix(proj, model.joint.samples[sl, half:], bw_block)
            kbp = kernel_factor_matrix(proj, model.product.samples[sl, half:], bw_block)
            joint_all += ka @ kb.T
            prod_all += ka @ kbp.T
        joint_all /= n_samp
        prod_all /= n_samp
        # every evaluated pair is one of the fitted samples: self-excluded
        joint_vals = _loo_correct(joint_all[iu, ju], model.joint)
        pj = np.log(np.maximum(joint_vals, DENSITY_EPS))
        pab = np.log(np.maximum(prod_all[iu, ju], DENSITY_EPS))
        vals = np.exp(rho * pj - pab)
        W[iu, ju] = vals
        W[ju, iu] = vals
    diag = W.max(axis=1)
    W[np.arange(n), np.arange(n)] = diag
    return W
