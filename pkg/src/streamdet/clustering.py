"""Spectral clustering of proposals within a sub-sequence, streaming
sub-sequence management and cluster identity association via KL divergence."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .affinity import (FeatureVector, HIST_BINS, ProductKDE,
                       silverman_bandwidths)

KL_EPS = 1e-12


def make_subsequences(frame_count: int, length: int) -> list[list[int]]:
    """Split frame indices into length-L windows overlapping by one frame.

    Starts advance by L-1; the final window is truncated to the remaining
    frames and generation stops once the last frame is covered, so every
    tail still spans at least 2 frames.
    """
    if frame_count < 2:
        raise ValueError(f"need at least 2 frames, got {frame_count}")
    if not 2 <= length <= 8:
        raise ValueError(f"sub-sequence length must lie in [2, 8], got {length}")
    ranges: list[list[int]] = []
    start = 0
    while True:
        end = min(start + length, frame_count)
        ranges.append(list(range(start, end)))
        if end >= frame_count:
            break
        start = end - 1
    return ranges


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: iteratively sample centers with probability
    proportional to the squared distance to the nearest chosen center."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = points[first]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c:] = points[first]
            break
        probs = d2 / total
        idx = int(rng.choice(n, p=probs))
        centers[c] = points[idx]
        d2 = np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1))
    return centers


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
            max_iter: int = 100, tol: float = 1e-9) -> np.ndarray:
    centers = _kmeans_pp_init(points, k, rng)
    labels = np.zeros(points.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_centers = centers.copy()
        for c in range(k):
            members = points[labels == c]
            if members.shape[0]:
                new_centers[c] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its center
                far = int(d2.min(axis=1).argmax())
                new_centers[c] = points[far]
        shift = np.abs(new_centers - centers).max()
        centers = new_centers
        if shift <= tol:
            break
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _spectral_embedding(W: np.ndarray, k: int) -> np.ndarray:
    """Row-normalized leading-k eigenvectors of D^-1/2 W D^-1/2."""
    W = 0.5 * (W + W.T)
    deg = W.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1e-12))
    S = inv_sqrt[:, None] * W * inv_sqrt[None, :]
    vals, vecs = np.linalg.eigh(S)
    U = vecs[:, np.argsort(vals)[::-1][:k]]
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    return U / np.maximum(norms, 1e-12)


def spectral_cluster_fixed(W: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Normalized-cut style clustering into exactly k groups with seeded
    k-means++ initialization."""
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    if n < k:
        warnings.warn(f"only {n} points for k={k}: every point is its own cluster")
        return np.arange(n, dtype=np.int64)
    U = _spectral_embedding(W, k)
    rng = np.random.default_rng(seed)
    return _kmeans(U, k, rng)


def _normalized_laplacian_eigvals(W: np.ndarray) -> np.ndarray:
    deg = W.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1e-12))
    S = inv_sqrt[:, None] * W * inv_sqrt[None, :]
    L = np.eye(W.shape[0]) - 0.5 * (S + S.T)
    return np.sort(np.linalg.eigvalsh(L))


def spectral_cluster_selftune(W: np.ndarray | None = None,
                              distances: np.ndarray | None = None,
                              max_clusters: int = 5, knn: int = 7,
                              seed: int = 0) -> np.ndarray:
    """Local-scaling spectral clustering with the cluster count chosen by the
    largest eigengap of the normalized Laplacian, capped at max_clusters.

    Pairwise distances are used directly when given; otherwise they are
    derived from the affinity matrix as sqrt(max(log W) - log W_ij).
    """
    if distances is None:
        if W is None:
            raise ValueError("need an affinity matrix or a distance matrix")
        W = np.asarray(W, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logw = np.log(np.maximum(W, 0.0))
        finite = logw[np.isfinite(logw)]
        top = finite.max() if finite.size else 0.0
        d2 = np.where(np.isfinite(logw), np.maximum(top - logw, 0.0), np.inf)
    else:
        distances = np.asarray(distances, dtype=np.float64)
        d2 = distances ** 2
    n = d2.shape[0]
    if n <= 1:
        return np.zeros(n, dtype=np.int64)

    # local scales: distance to the knn-th neighbor (self excluded)
    d = np.sqrt(np.where(np.isfinite(d2), d2, np.inf))
    np.fill_diagonal(d, np.inf)
    sigma = np.empty(n)
    for i in range(n):
        finite = np.sort(d[i][np.isfinite(d[i])])
        if finite.size == 0:
            sigma[i] = 1.0
        else:
            sigma[i] = finite[min(knn - 1, finite.size - 1)]
    sigma = np.maximum(sigma, 1e-9)

    A = np.exp(-np.where(np.isfinite(d2), d2, np.inf) / (sigma[:, None] * sigma[None, :]))
    A[~np.isfinite(A)] = 0.0
    np.fill_diagonal(A, 0.0)

    vals = _normalized_laplacian_eigvals(A)
    k_hi = min(max_clusters, n)
    # eigengap judged against the mean of the preceding (inside-cluster)
    # eigenvalues: k clusters require lambda_0..lambda_{k-1} all small and a
    # large step after them; the floor keeps single connected clouds whole
    gaps = [(vals[k] - vals[k - 1]) / max(float(np.mean(vals[:k])), 0.1)
            for k in range(1, k_hi + 1) if k < n]
    if not gaps:
        return np.zeros(n, dtype=np.int64)
    k = int(np.argmax(gaps)) + 1
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    U = _spectral_embedding(A, k)
    rng = np.random.default_rng(seed)
    return _kmeans(U, k, rng)


def scale_features(features: list[FeatureVector]) -> np.ndarray:
    """49-D descriptor space: histogram dims stretched 15x so one bin spans a
    range comparable to the normalized location dims."""
    hists = np.array([f.color_hist for f in features], dtype=np.float64)
    locs = np.array([f.location for f in features], dtype=np.float64)
    return np.concatenate([hists * HIST_BINS, locs], axis=1)


@dataclass
class ClusterDescriptor:
    """Kernel-density summary of one cluster's members in a PCA basis."""

    raw: np.ndarray            # (n, 49) scaled feature rows
    mean: np.ndarray           # PCA center (49,)
    components: np.ndarray     # (dim, 49) orthonormal rows
    samples: np.ndarray        # (n, dim) projected members
    bandwidths: np.ndarray     # (dim,)
    member_indices: np.ndarray
    degenerate: bool
    kde: ProductKDE = field(repr=False, default=None)

    @property
    def size(self) -> int:
        return self.raw.shape[0]


def _fit_pca(X: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    centered = X - mean
    if X.shape[0] > 1 and np.any(centered):
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        comps = vt[:dim]
        for r in range(comps.shape[0]):
            if comps[r, np.argmax(np.abs(comps[r]))] < 0:
                comps[r] = -comps[r]
        if comps.shape[0] < dim:
            comps = np.pad(comps, ((0, dim - comps.shape[0]), (0, 0)))
    else:
        comps = np.zeros((dim, X.shape[1]))
    return mean, comps


RESIDUAL_BANDWIDTH_FLOOR = 0.25


def _project_with_residual(raw: np.ndarray, mean: np.ndarray,
                           comps: np.ndarray) -> np.ndarray:
    """Coordinates in a PCA basis plus the distance to its affine subspace.

    The residual keeps differences orthogonal to the basis visible; without
    it, a cluster whose variance misses a discriminating dimension would
    absorb arbitrarily different clusters in the KL comparison.
    """
    centered = raw - mean
    z = centered @ comps.T
    resid = np.linalg.norm(centered - z @ comps, axis=1)
    return np.concatenate([z, resid[:, None]], axis=1)


def _descriptor_kde(samples: np.ndarray) -> tuple[ProductKDE, np.ndarray]:
    bw = silverman_bandwidths(samples, dim=samples.shape[1])
    bw[-1] = max(bw[-1], RESIDUAL_BANDWIDTH_FLOOR)
    return ProductKDE(samples, bw), bw


def cluster_descriptor(features: list[FeatureVector],
                       member_indices=None, max_dim: int = 8) -> ClusterDescriptor:
    """PCA-reduce a cluster's scaled features and fit an Epanechnikov KDE.

    Singleton clusters produce a degenerate point-mass descriptor.
    """
    if not features:
        raise ValueError("a cluster needs at least one member")
    raw = scale_features(features)
    n = raw.shape[0]
    dim = max(1, min(max_dim, n - 1, raw.shape[1]))
    mean, comps = _fit_pca(raw, dim)
    samples = _project_with_residual(raw, mean, comps)
    kde, bw = _descriptor_kde(samples)
    degenerate = n == 1 or not np.any(samples.std(axis=0) > 0)
    idx = (np.asarray(member_indices, dtype=np.int64)
           if member_indices is not None else np.arange(n, dtype=np.int64))
    return ClusterDescriptor(raw, mean, comps, samples, bw, idx, degenerate, kde)


def kl_divergence(p: ClusterDescriptor, q: ClusterDescriptor,
                  eps: float = KL_EPS) -> float:
    """Monte Carlo KL(p || q) over p's members, evaluated in q's basis.

    Both densities are kernel estimates in q's projection (plus the residual
    coordinate), so descriptors fit in different bases stay comparable; the
    estimate is clamped at 0.
    """
    if p.size == 0 or q.size == 0:
        raise ValueError("descriptors must be non-empty")
    x = _project_with_residual(p.raw, q.mean, q.components)
    p_kde, _ = _descriptor_kde(x)
    log_p = np.log(np.maximum(p_kde.evaluate(x), eps))
    log_q = np.log(np.maximum(q.kde.evaluate(x), eps))
    return max(0.0, float(np.mean(log_p - log_q)))


@dataclass
class RegistryEntry:
    descriptor: ClusterDescriptor
    label: str | None = None
    confidence: float = 0.0
    offset: np.ndarray | None = None   # localization offset d (4-vector)
    last_seen: int = -1


class ClusterRegistry:
    """Streaming registry of global cluster identities; ids are never reused."""

    def __init__(self):
        self.entries: dict[int, RegistryEntry] = {}
        self._next_id = 0

    def new_id(self) -> int:
        gid = self._next_id
        self._next_id += 1
        return gid

    def seen_in(self, subseq_index: int) -> list[int]:
        return [gid for gid, e in self.entries.items() if e.last_seen == subseq_index]

    def __getitem__(self, gid: int) -> RegistryEntry:
        return self.entries[gid]

    def __len__(self) -> int:
        return len(self.entries)


def associate_clusters(descriptors: list[ClusterDescriptor],
                       registry: ClusterRegistry, tau_kl: float,
                       subseq_index: int) -> tuple[list[int], set[int]]:
    """Match current clusters to the previous sub-sequence's clusters.

    Greedy one-to-one matching in ascending KL order; a match below tau_kl
    inherits the global id, everything else gets a fresh id. Ties break on
    the lower global id. Returns (global id per cluster, set of new ids).
    """
    prev_ids = registry.seen_in(subseq_index - 1)
    candidates = []
    for ci, desc in enumerate(descriptors):
        for gid in prev_ids:
            kl = kl_divergence(desc, registry[gid].descriptor)
            if kl < tau_kl:
                candidates.append((kl, gid, ci))
    candidates.sort(key=lambda t: (t[0], t[1], t[2]))

    assigned: dict[int, int] = {}
    used_gids: set[int] = set()
    for kl, gid, ci in candidates:
        if ci in assigned or gid in used_gids:
            continue
        assigned[ci] = gid
        used_gids.add(gid)

    result: list[int] = []
    new_ids: set[int] = set()
    for ci, desc in enumerate(descriptors):
        if ci in assigned:
            gid = assigned[ci]
            entry = registry[gid]
            entry.descriptor = desc
            entry.last_seen = subseq_index
        else:
            gid = registry.new_id()
            registry.entries[gid] = RegistryEntry(desc, last_seen=subseq_index)
            new_ids.add(gid)
        result.append(gid)
    return result, new_ids
