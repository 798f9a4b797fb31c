"""Per-cluster translation fitting and greedy hierarchical merging.

Each over-segmentation cluster gets a 3-D translation fitted from its
derotated normal flow under a unit-depth planar model.  Clusters are then
merged greedily: the most similar spatially-connected pair above a threshold
is combined, its translation refit, until no pair qualifies.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .background import BackgroundMap, map_support_fraction

TIKHONOV_LAMBDA = 1e-6


@dataclass
class SegmentCandidate:
    event_indices: np.ndarray   # indices into the slice's event arrays
    translation: np.ndarray     # (3,) fitted translation, unit-depth convention
    mean_residual: float
    bbox: np.ndarray            # (4,) [xmin, ymin, xmax, ymax] in pixels
    is_bg_like: bool = False


def fit_cluster_translation(points, flow_vec,
                            reg: float = TIKHONOV_LAMBDA) -> np.ndarray:
    """Tikhonov-regularized translation fit at unit depth.

    Accumulates sum(A_i^T A_i + reg*I) t = sum(A_i^T m_i) over the cluster's
    samples, with m_i the 2-vector form of the derotated normal flow
    (n_derot_i * n0_i; the full flow when both components are observed).
    The regularizer keeps the system solvable when the flow directions do
    not span the image plane; it then selects the minimum-norm translation.
    """
    p = np.asarray(points, dtype=float)
    m = np.asarray(flow_vec, dtype=float)
    count = p.shape[0]
    if count == 0:
        return np.zeros(3)
    x, y = p[:, 0], p[:, 1]

    # A^T A summed in closed form: A = [[-1, 0, x], [0, -1, y]]
    lhs = np.zeros((3, 3))
    lhs[0, 0] = count
    lhs[1, 1] = count
    lhs[0, 2] = lhs[2, 0] = -x.sum()
    lhs[1, 2] = lhs[2, 1] = -y.sum()
    lhs[2, 2] = float(x @ x + y @ y)
    lhs += count * reg * np.eye(3)

    mx, my = m[:, 0], m[:, 1]
    rhs = np.array([-mx.sum(), -my.sum(), float(x @ mx + y @ my)])
    return np.linalg.solve(lhs, rhs)


def similarity(ci: SegmentCandidate, cj: SegmentCandidate,
               lambda_r: float = 0.5, bg_penalty: float = 1.0) -> float:
    """Motion-and-residual similarity, <= 0 with 0 for identical clusters.

    The motion term is a normalized squared translation difference; it is
    defined as 0 when both translations vanish (identical zero motion).  A
    flat penalty applies when exactly one cluster looks like background, to
    discourage merges across the background/foreground boundary.
    """
    ti, tj = ci.translation, cj.translation
    denom = float(ti @ ti + tj @ tj)
    motion = 0.0 if denom == 0.0 else float((ti - tj) @ (ti - tj)) / denom
    score = -motion - lambda_r * (ci.mean_residual - cj.mean_residual) ** 2
    if ci.is_bg_like != cj.is_bg_like:
        score -= bg_penalty
    return score


def bboxes_overlap(a, b, dilation: float = 2.0) -> bool:
    """Axis-aligned overlap test; boxes are dilated and touching counts."""
    return (a[0] - dilation <= b[2] + dilation and b[0] - dilation <= a[2] + dilation
            and a[1] - dilation <= b[3] + dilation and b[1] - dilation <= a[3] + dilation)


def events_bbox(xy_px) -> np.ndarray:
    xy = np.asarray(xy_px, dtype=float)
    return np.array([xy[:, 0].min(), xy[:, 1].min(), xy[:, 0].max(), xy[:, 1].max()])


def fit_translation_scalar(points, n0, n_derot,
                           reg: float = TIKHONOV_LAMBDA) -> np.ndarray:
    """Translation fit from the scalar normal-flow constraints at unit depth.

    Solves the normal equations of min_t sum_i (n_derot_i - (A_i t) . n0_i)^2
    with the same Tikhonov term as fit_cluster_translation.  Unlike the
    full-Gram system, this is exact for noise-free consistent measurements,
    so per-cluster directions stay comparable even under skewed flow-direction
    coverage; the merging stage relies on that.
    """
    p = np.asarray(points, dtype=float)
    d = np.asarray(n0, dtype=float)
    nd = np.asarray(n_derot, dtype=float)
    count = p.shape[0]
    if count == 0:
        return np.zeros(3)
    g = np.stack([-d[:, 0], -d[:, 1],
                  p[:, 0] * d[:, 0] + p[:, 1] * d[:, 1]], axis=1)
    lhs = g.T @ g + count * reg * np.eye(3)
    return np.linalg.solve(lhs, g.T @ nd)


# a candidate's translation is fit on this many residual-foreground events at
# least, otherwise on all of its events
MIN_FIT_EVENTS = 10
MIN_FIT_FRACTION = 0.3


def _trimmed_fit(points, n0, n_derot, reg, passes: int = 3):
    """Scalar-constraint fit with iterative outlier trimming.

    A small admixture of events from a different motion can swing the weakly
    excited depth-axis component by an order of magnitude; refitting after
    dropping gross outliers (beyond 3x the median absolute residual) removes
    that leverage while leaving consistent sets untouched.
    """
    p = np.asarray(points, dtype=float)
    d = np.asarray(n0, dtype=float)
    nd = np.asarray(n_derot, dtype=float)
    t = fit_translation_scalar(p, d, nd, reg=reg)
    for _ in range(passes):
        pred = ((p[:, 0] * t[2] - t[0]) * d[:, 0] + (p[:, 1] * t[2] - t[1]) * d[:, 1])
        err = np.abs(nd - pred)
        keep = err <= 3.0 * np.median(err) + 1e-12
        if keep.all() or keep.sum() < max(MIN_FIT_EVENTS, MIN_FIT_FRACTION * keep.size):
            break
        p, d, nd = p[keep], d[keep], nd[keep]
        t = fit_translation_scalar(p, d, nd, reg=reg)
    return t


def make_candidate(event_indices, points, n0, n_derot, xy_px, residuals,
                   bg_map: BackgroundMap | None = None,
                   bg_like_threshold: float = 0.5,
                   reg: float = TIKHONOV_LAMBDA,
                   fit_mask=None) -> SegmentCandidate:
    """Build a candidate from event indices, fitting its translation.

    When fit_mask is given, the translation is fit only on the candidate's
    events flagged there (the residual-foreground subset), which keeps
    boundary-straddling clusters from contaminating the motion estimate;
    if too few events are flagged the whole candidate is used.
    """
    idx = np.asarray(event_indices, dtype=int)
    fit_idx = idx
    has_core = False
    if fit_mask is not None:
        flagged = idx[fit_mask[idx]]
        if flagged.size >= MIN_FIT_EVENTS:
            fit_idx = flagged
            has_core = True
    t = _trimmed_fit(points[fit_idx], n0[fit_idx], n_derot[fit_idx], reg)
    # a candidate with a core of events contradicting the background model is
    # never background-like, wherever it sits on the map
    is_bg = False
    if not has_core and bg_map is not None and bg_map.grid.any():
        is_bg = map_support_fraction(bg_map, xy_px[idx]) > bg_like_threshold
    return SegmentCandidate(
        event_indices=idx,
        translation=t,
        mean_residual=float(np.mean(residuals[idx])),
        bbox=events_bbox(xy_px[idx]),
        is_bg_like=is_bg,
    )


def split_components(xy_px, indices, radius: float = 4.0,
                     min_size: int = MIN_FIT_EVENTS):
    """Split an event-index set into spatially connected components.

    Events are connected when within `radius` pixels.  Components smaller
    than min_size are returned separately as leftovers; they carry too few
    events for a meaningful motion fit.
    """
    from scipy.spatial import cKDTree

    idx = np.asarray(indices, dtype=int)
    if idx.size == 0:
        return [], idx
    pts = np.asarray(xy_px, dtype=float)[idx]
    parent = np.arange(idx.size)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree = cKDTree(pts)
    for a, b in sorted(tree.query_pairs(radius)):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(a) for a in range(idx.size)])
    components, leftovers = [], []
    for r in np.unique(roots):
        member = idx[roots == r]
        if member.size >= min_size:
            components.append(member)
        else:
            leftovers.append(member)
    rest = np.sort(np.concatenate(leftovers)) if leftovers else np.empty(0, dtype=int)
    return components, rest


def hierarchical_merge(candidates, points, n0, n_derot, xy_px, residuals,
                       threshold: float = -0.15,
                       lambda_r: float = 0.5,
                       bg_penalty: float = 1.0,
                       bbox_dilation: float = 2.0,
                       bg_map: BackgroundMap | None = None,
                       bg_like_threshold: float = 0.5,
                       reg: float = TIKHONOV_LAMBDA,
                       fit_mask=None):
    """Greedy agglomeration of candidates by motion similarity.

    Repeatedly merges the spatially-connected pair with the highest
    similarity above the threshold (ties broken by lowest index pair),
    refitting the union's translation and recomputing its residual mean and
    bounding box, until no pair qualifies or one cluster remains.  Event
    indices are conserved across merges.
    """
    active = list(candidates)
    while len(active) >= 2:
        best_score = None
        best_pair = None
        for i in range(len(active)):
            for j in range(i + 1, len(active)):
                if not bboxes_overlap(active[i].bbox, active[j].bbox, bbox_dilation):
                    continue
                s = similarity(active[i], active[j], lambda_r, bg_penalty)
                if s > threshold and (best_score is None or s > best_score):
                    best_score = s
                    best_pair = (i, j)
        if best_pair is None:
            break
        i, j = best_pair
        merged_idx = np.sort(np.concatenate([active[i].event_indices,
                                             active[j].event_indices]))
        merged = make_candidate(merged_idx, points, n0, n_derot, xy_px,
                                residuals, bg_map, bg_like_threshold, reg,
                                fit_mask)
        # union keeps background likeness if either side had it and no map
        if bg_map is None or not bg_map.grid.any():
            merged = replace(merged, is_bg_like=active[i].is_bg_like or active[j].is_bg_like)
        active = [c for idx2, c in enumerate(active) if idx2 not in (i, j)]
        active.append(merged)
    return active
