"""Temporal background maintenance.

Across steps the pipeline keeps the previous background's event coordinates
and motion, a persistent occupancy map of everything ever classified as
background, and uses them to (1) warp the old background forward, (2) match
current clusters against it, (3) re-estimate the camera's translation
direction from derotated normal flow under the positive-depth constraint,
and (4) refresh the map with an exponential moving average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientSupport
from .geometry import MotionParams, flow_at

DEFAULT_SVM_ITERS = 500
DEFAULT_MIN_SAMPLES = 50
DEFAULT_MIN_AGREEMENT = 0.6


@dataclass
class BackgroundMap:
    """Persistent occupancy grid of background evidence, values in [0, 1]."""

    grid: np.ndarray           # (H, W)
    alpha_last: float = 0.0

    @staticmethod
    def empty(width: int, height: int) -> "BackgroundMap":
        return BackgroundMap(grid=np.zeros((height, width)))


@dataclass
class BackgroundState:
    """Everything the next step needs to know about the current background."""

    mask_points: np.ndarray    # (M, 2) calibrated coordinates of bg events
    motion: MotionParams       # background motion; t scaled to unit depth
    map: BackgroundMap


@dataclass
class TranslationEstimate:
    direction: np.ndarray      # (3,) unit translation direction
    scale: float               # least-squares magnitude of t/Z0 (1/s) at Z0=1
    agreement: float           # fraction of samples on the positive side
    residuals: np.ndarray      # (N,) observed minus predicted normal flow


def warp_background(points, motion: MotionParams, dt: float,
                    depth: float = 1.0) -> np.ndarray:
    """Displace calibrated points by dt times their model flow.

    Uses a constant-depth planar motion model: every point shares the same
    depth, so the warp is a first-order advection along the flow field.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = np.asarray(points, dtype=float)
    if p.size == 0:
        return p.reshape(0, 2)
    return p + dt * flow_at(p, motion, 1.0 / depth)


def match_clusters(warped_px, xy_px, labels, n_clusters: int,
                   radius_px: float = 2.0, min_fraction: float = 0.5) -> np.ndarray:
    """Cluster indices whose events lie close to the warped background.

    A cluster matches when the fraction of its events within radius_px of
    any warped point exceeds min_fraction.  Returns the sorted matched ids;
    the set may be empty.
    """
    warped = np.asarray(warped_px, dtype=float)
    xy = np.asarray(xy_px, dtype=float)
    lab = np.asarray(labels)
    if warped.shape[0] == 0 or xy.shape[0] == 0:
        return np.empty(0, dtype=int)
    tree = cKDTree(warped)
    dist, _ = tree.query(xy, k=1)
    near = dist <= radius_px
    matched = []
    for c in range(n_clusters):
        members = lab == c
        total = int(members.sum())
        if total and near[members].sum() / total > min_fraction:
            matched.append(c)
    return np.asarray(matched, dtype=int)


def _sign_features(points, n0, n_derot):
    """Per-event 3-vectors s_i * (A(p_i)^T n0_i) for the positive-depth SVM.

    Under the rigid model n_derot = (1/Z) (A t . n0) with Z > 0, so the sign
    of n_derot labels the half-space of A^T n0 relative to t; folding the
    sign into the feature turns direction recovery into separating all
    features from the origin.  Zero-sign samples carry no information and
    are dropped.
    """
    p = np.asarray(points, dtype=float)
    d = np.asarray(n0, dtype=float)
    nd = np.asarray(n_derot, dtype=float)
    # A(p)^T n0 = [-n0x, -n0y, x n0x + y n0y]
    g = np.stack([-d[:, 0], -d[:, 1],
                  p[:, 0] * d[:, 0] + p[:, 1] * d[:, 1]], axis=1)
    s = np.sign(nd)
    keep = s != 0.0
    return s[keep, None] * g[keep], keep


def estimate_translation_svm(points, n0, n_derot,
                             c: float = 1.0,
                             iterations: int = DEFAULT_SVM_ITERS,
                             min_samples: int = DEFAULT_MIN_SAMPLES,
                             min_agreement: float = DEFAULT_MIN_AGREEMENT) -> TranslationEstimate:
    """Translation direction from derotated normal flow, positive-depth form.

    A homogeneous (bias-free) linear max-margin separator is fit to the sign
    features by deterministic full-batch subgradient descent on the hinge
    loss with L2 regularization.  Only the direction is observable; the
    returned scale is a separate least-squares fit of the predicted normal
    flow magnitude at unit depth, used to form residuals.

    Raises InsufficientSupport when fewer than min_samples events carry a
    nonzero sign, or when the optimum separates less than min_agreement of
    them (a bad background set).
    """
    feats, keep = _sign_features(points, n0, n_derot)
    m = feats.shape[0]
    if m < min_samples:
        raise InsufficientSupport(f"only {m} sign-carrying samples (need {min_samples})")

    lam = 1.0 / (c * m)
    w = feats.mean(axis=0)
    nw = np.linalg.norm(w)
    w = w / nw if nw > 0 else np.array([0.0, 0.0, 1.0])
    # subgradient descent with a 1/(lam*t) schedule; the average over the
    # second half of the iterates damps the schedule's oscillation
    avg = np.zeros(3)
    avg_count = 0
    for it in range(1, iterations + 1):
        margins = feats @ w
        viol = margins < 1.0
        grad = lam * w - feats[viol].sum(axis=0) / m
        w = w - grad / (lam * it)
        if 2 * it > iterations:
            avg += w
            avg_count += 1
    w = avg / avg_count

    margins = feats @ w
    agreement = float(np.mean(margins > 0.0))
    norm = np.linalg.norm(w)
    if norm == 0.0 or agreement < min_agreement:
        raise InsufficientSupport(f"sign agreement {agreement:.3f} below {min_agreement}")
    direction = w / norm

    # magnitude at unit depth so residuals see a scaled prediction
    p = np.asarray(points, dtype=float)
    d = np.asarray(n0, dtype=float)
    nd = np.asarray(n_derot, dtype=float)
    q = np.sum(flow_at(p, MotionParams(direction, np.zeros(3)), 1.0) * d, axis=1)
    denom = float(q @ q)
    scale = float(q @ nd) / denom if denom > 0 else 0.0
    residuals = nd - scale * q
    return TranslationEstimate(direction=direction, scale=scale,
                               agreement=agreement, residuals=residuals)


def rasterize(xy_px, width: int, height: int) -> np.ndarray:
    """Binary occupancy grid of event positions (out-of-frame events dropped)."""
    grid = np.zeros((height, width))
    xy = np.asarray(xy_px, dtype=float)
    if xy.shape[0] == 0:
        return grid
    cols = np.floor(xy[:, 0]).astype(int)
    rows = np.floor(xy[:, 1]).astype(int)
    ok = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    grid[rows[ok], cols[ok]] = 1.0
    return grid


def update_map(bg_map: BackgroundMap, xy_px, similarity: float,
               alpha_min: float = 0.05, alpha_max: float = 0.5) -> BackgroundMap:
    """EMA update of the persistent map with similarity-adaptive weight.

    alpha interpolates linearly from alpha_min (dissimilar candidate, keep
    history) to alpha_max (confident match, adapt quickly).
    """
    if not 0.0 <= similarity <= 1.0:
        raise ValueError("similarity must be in [0, 1]")
    h, w = bg_map.grid.shape
    alpha = alpha_min + (alpha_max - alpha_min) * similarity
    grid = (1.0 - alpha) * bg_map.grid + alpha * rasterize(xy_px, w, h)
    return BackgroundMap(grid=grid, alpha_last=alpha)


def _block_histogram(grid: np.ndarray, block: int = 8) -> np.ndarray:
    h, w = grid.shape
    ph = (-h) % block
    pw = (-w) % block
    if ph or pw:
        grid = np.pad(grid, ((0, ph), (0, pw)))
    hh, ww = grid.shape
    return grid.reshape(hh // block, block, ww // block, block).sum(axis=(1, 3))


def background_similarity(bg_map: BackgroundMap, xy_px, block: int = 8) -> float:
    """Cosine similarity between the map and a candidate's occupancy.

    Both are reduced to coarse block histograms (1/8 resolution) so the
    score measures shape overlap rather than exact event placement.
    """
    h, w = bg_map.grid.shape
    cand = rasterize(xy_px, w, h)
    a = _block_histogram(bg_map.grid, block).ravel()
    b = _block_histogram(cand, block).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip((a @ b) / (na * nb), 0.0, 1.0))


def map_support_fraction(bg_map: BackgroundMap, xy_px, floor: float = 0.05,
                         window: int = 2) -> float:
    """Fraction of events lying near map cells with at least `floor` evidence.

    Unlike the whole-frame cosine score this stays meaningful for small,
    local candidates: a patch of true background scores near 1 regardless of
    its size.  Each event checks a (2*window+1)^2 neighborhood because the
    map accumulates sparse event rasters, not dense occupancy.
    """
    xy = np.asarray(xy_px, dtype=float)
    if xy.shape[0] == 0:
        return 0.0
    from scipy.ndimage import maximum_filter
    evidence = maximum_filter(bg_map.grid, size=2 * window + 1, mode="constant")
    h, w = bg_map.grid.shape
    cols = np.clip(np.floor(xy[:, 0]).astype(int), 0, w - 1)
    rows = np.clip(np.floor(xy[:, 1]).astype(int), 0, h - 1)
    return float(np.mean(evidence[rows, cols] >= floor))
