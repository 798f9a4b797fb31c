"""Event over-segmentation and residual-based foreground/background split.

Over-segmentation runs k-means on per-event features combining pixel
position with a weighted flow vector, producing more clusters than objects
so that motion boundaries are preserved.  Residual segregation smooths
per-event residual magnitudes on the image grid and 2-means them into a
low-residual (background) and a high-residual (candidate object) group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySlice


@dataclass
class ClusterSet:
    labels: np.ndarray     # (N,) int, 0 <= label < k
    k: int
    centroids: np.ndarray  # (k, D) mean feature of each non-empty cluster


@dataclass
class ResidualGrid:
    width: int
    height: int
    values: np.ndarray     # (H, W) smoothed residual magnitude per cell


def _lex_smallest(features: np.ndarray, candidates: np.ndarray) -> int:
    """Index (into the full array) of the lexicographically smallest candidate row.

    Used to break exact ties so that seeding does not depend on input order.
    """
    rows = features[candidates]
    order = np.lexsort(rows.T[::-1])
    return int(candidates[order[0]])


def _seed_centroids(features: np.ndarray, k: int) -> np.ndarray:
    """Farthest-point seeding: deterministic and invariant to input order.

    The first seed is the point farthest from the feature mean; each further
    seed maximizes the distance to the nearest seed chosen so far.  Exact
    distance ties are broken lexicographically on the feature vector.
    """
    n = features.shape[0]
    dist = np.sum((features - features.mean(axis=0)) ** 2, axis=1)
    seeds = [_lex_smallest(features, np.flatnonzero(dist == dist.max()))]
    min_d2 = np.sum((features - features[seeds[0]]) ** 2, axis=1)
    while len(seeds) < min(k, n):
        best = min_d2.max()
        if best == 0.0:
            break  # every remaining point duplicates a seed
        seeds.append(_lex_smallest(features, np.flatnonzero(min_d2 == best)))
        d2 = np.sum((features - features[seeds[-1]]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    return features[seeds].copy()


def kmeans(features, k: int, max_iter: int = 100, tol: float = 1e-6):
    """Lloyd's k-means with deterministic farthest-point seeding.

    Returns (labels, centroids).  Empty clusters are dropped, so the number
    of returned centroids may be below k.  The assignment is a pure function
    of the feature multiset: permuting the input only renames labels.
    """
    f = np.asarray(features, dtype=float)
    if f.ndim != 2 or f.shape[0] == 0:
        raise EmptySlice("k-means needs a non-empty 2-D feature array")
    centroids = _seed_centroids(f, k)

    labels = np.zeros(f.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        # distance to each centroid; argmin breaks ties by lowest index
        d2 = np.sum((f[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        counts = np.bincount(labels, minlength=centroids.shape[0])
        keep = counts > 0
        if not keep.all():
            remap = np.cumsum(keep) - 1
            labels = remap[labels]
            centroids = centroids[keep]
            counts = counts[keep]
        new_centroids = np.zeros_like(centroids)
        np.add.at(new_centroids, labels, f)
        new_centroids /= counts[:, None]
        shift = np.sqrt(np.sum((new_centroids - centroids) ** 2, axis=1)).max()
        centroids = new_centroids
        if shift <= tol:
            break

    # final assignment against the converged centroids
    d2 = np.sum((f[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, centroids


def over_segment(xy_px, flow_vec, k: int = 30, weight: float = 0.5,
                 max_iter: int = 100, tol: float = 1e-6) -> ClusterSet:
    """Coarse over-segmentation of one event slice.

    Features are [x_px, y_px, weight * flow] with flow the 2-vector form of
    the per-event normal flow, in pixels per second so the weight balances
    spatial against motion distance.
    """
    xy = np.asarray(xy_px, dtype=float)
    fv = np.asarray(flow_vec, dtype=float)
    if xy.shape[0] == 0:
        raise EmptySlice("over_segment called with no events")
    if k < 2:
        raise ValueError("need at least 2 clusters")
    features = np.hstack([xy, weight * fv])
    labels, centroids = kmeans(features, k, max_iter=max_iter, tol=tol)
    return ClusterSet(labels=labels, k=centroids.shape[0], centroids=centroids)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Unnormalized Gaussian taps on integer offsets, truncated at 3 sigma."""
    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=float)
    return np.exp(-0.5 * (offsets / sigma) ** 2)


def _convolve_separable(grid: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D convolution with outer(kernel, kernel), zero padding outside."""
    radius = (kernel.size - 1) // 2
    h, w = grid.shape
    padded = np.zeros((h + 2 * radius, w + 2 * radius))
    padded[radius:radius + h, radius:radius + w] = grid
    # rows
    tmp = np.zeros((h, w + 2 * radius))
    for i, kv in enumerate(kernel):
        tmp += kv * padded[i:i + h, :]
    out = np.zeros((h, w))
    for j, kv in enumerate(kernel):
        out += kv * tmp[:, j:j + w]
    return out


def smooth_residuals(xy_px, residuals, sigma: float, width: int, height: int):
    """Grid-based Gaussian smoothing of per-event residual magnitudes.

    Magnitudes are splatted onto their integer pixel cell, convolved with a
    truncated Gaussian, and normalized by the identically smoothed event
    count so constant fields stay constant.  Returns the smoothed grid and
    the per-event value sampled back at each event's cell.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    xy = np.asarray(xy_px, dtype=float)
    mag = np.abs(np.asarray(residuals, dtype=float))
    cols = np.clip(np.floor(xy[:, 0]).astype(int), 0, width - 1)
    rows = np.clip(np.floor(xy[:, 1]).astype(int), 0, height - 1)

    splat = np.zeros((height, width))
    count = np.zeros((height, width))
    np.add.at(splat, (rows, cols), mag)
    np.add.at(count, (rows, cols), 1.0)

    kernel = gaussian_kernel_1d(sigma)
    num = _convolve_separable(splat, kernel)
    den = _convolve_separable(count, kernel)
    grid = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    per_event = grid[rows, cols]
    return ResidualGrid(width=width, height=height, values=grid), per_event


def segregate_by_residual(smoothed):
    """1-D 2-means on smoothed residuals; the lower-center cluster is background.

    Returns (background_indices, foreground_indices).  If the values collapse
    to a single cluster, everything is background.
    """
    v = np.asarray(smoothed, dtype=float)
    if v.size < 2:
        raise ValueError("need at least 2 events to segregate")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return np.arange(v.size), np.empty(0, dtype=int)
    c0, c1 = lo, hi
    for _ in range(100):
        mid = 0.5 * (c0 + c1)
        fg = v > mid
        if not fg.any() or fg.all():
            break
        n0, n1 = float(v[~fg].mean()), float(v[fg].mean())
        if n0 == c0 and n1 == c1:
            break
        c0, c1 = n0, n1
    fg = v > 0.5 * (c0 + c1)
    return np.flatnonzero(~fg), np.flatnonzero(fg)
