"""Recursive per-slice orchestration.

Each step runs four stages: over-segmentation of the event slice, planar-fit
residual segregation, temporally-consistent background identification with a
translation-direction re-estimate, and hierarchical motion-based merging
followed by track assignment.  State (background mask and motion, persistent
map, tracks) threads from step to step; the first frames fall back to
residual-only background until temporal cues exist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .background import (BackgroundMap, BackgroundState, background_similarity,
                         estimate_translation_svm, match_clusters, update_map,
                         warp_background)
from .clustering import over_segment, segregate_by_residual, smooth_residuals
from .config import PipelineConfig
from .data import Intrinsics, Predictions, Recording, SliceData
from .errors import DegenerateSystem, EmptySlice, InsufficientSupport, ValidationError
from .geometry import MotionParams, derotate, flow_at
from .merging import (hierarchical_merge, make_candidate, similarity,
                      split_components)
from .planar_fit import fit_plane, predict_normal_flow
from .tracking import SegmentTracker, TrackerConfig


def _bbox_area(b) -> float:
    return max(b[2] - b[0], 0.0) * max(b[3] - b[1], 0.0)


def _coverage(host, inner, dilation: float) -> float:
    """Fraction of `inner`'s box area covered by `host`'s dilated box."""
    ix = min(host[2] + dilation, inner[2]) - max(host[0] - dilation, inner[0])
    iy = min(host[3] + dilation, inner[3]) - max(host[1] - dilation, inner[1])
    area = _bbox_area(inner)
    if area <= 0.0:
        return 1.0 if ix >= 0 and iy >= 0 else 0.0
    return max(ix, 0.0) * max(iy, 0.0) / area


@dataclass
class SegmentResult:
    track_id: int
    motion: MotionParams
    event_indices: np.ndarray
    centroid_px: np.ndarray
    centroid_calib: np.ndarray
    bbox: np.ndarray


@dataclass
class PipelineState:
    background: BackgroundState
    tracker: SegmentTracker
    step_index: int
    segments: list[SegmentResult]


@dataclass
class StepInput:
    slice: SliceData
    width: int
    height: int
    intrinsics: Intrinsics
    prev: PipelineState | None = None


@dataclass
class StepOutput:
    labels: np.ndarray               # per-event track ids, 0 = background
    segments: list[SegmentResult]    # background first
    egomotion: MotionParams          # t is a unit direction when valid
    egomotion_valid: bool
    egomotion_scale: float           # fitted magnitude of t at unit depth, 1/s
    reinitialized: bool
    state: PipelineState


def step(inp: StepInput, cfg: PipelineConfig) -> StepOutput:
    sl = inp.slice
    n_events = len(sl)
    if n_events == 0:
        raise EmptySlice("step received an empty event slice")
    if np.abs(sl.points).max() > cfg.fov_limit:
        raise ValidationError("calibrated coordinates exceed the field-of-view limit")
    intr = inp.intrinsics
    focal = np.array([intr.fx, intr.fy])
    dt = sl.dt if sl.dt > 0 else cfg.slice_duration_s
    reinit = False

    # stage 1: over-segmentation on position + weighted flow (pixel units)
    flow_px = (sl.n[:, None] * sl.n0) * focal
    clusters = over_segment(sl.xy_px, flow_px, cfg.oversegment_k,
                            cfg.oversegment_weight, cfg.kmeans_max_iter, cfg.kmeans_tol)

    # stage 2: planar fit and residual segregation
    plane_residuals = np.zeros(n_events)
    try:
        fit = fit_plane(sl.points, sl.n0, sl.n)
        plane_residuals = fit.residuals
        _, smoothed = smooth_residuals(sl.xy_px, fit.residuals,
                                       cfg.smoothing_sigma_px, inp.width, inp.height)
        residual_bg, _residual_fg = segregate_by_residual(smoothed)
    except DegenerateSystem:
        residual_bg = np.arange(n_events)
        reinit = True

    n_derot = derotate(sl.points, sl.n0, sl.n, sl.imu_w)

    # stage 3: temporal background identification and translation estimate
    prev = inp.prev
    step_index = 0 if prev is None else prev.step_index + 1
    bg_map = (prev.background.map if prev is not None
              else BackgroundMap.empty(inp.width, inp.height))
    use_temporal = (prev is not None and step_index >= cfg.init_frames
                    and prev.background.mask_points.shape[0] > 0)

    coarse_bg = np.zeros(n_events, dtype=bool)
    if use_temporal:
        warped = warp_background(prev.background.mask_points,
                                 prev.background.motion, dt, cfg.warp_depth_m)
        warped_px = intr.to_pixels(warped)
        matched = match_clusters(warped_px, sl.xy_px, clusters.labels, clusters.k,
                                 cfg.match_radius_px, cfg.match_threshold)
        coarse_bg = np.isin(clusters.labels, matched)
        # temporal matching alone lets background leakage compound across
        # steps; requiring residual consistency as well keeps it bounded
        residual_mask = np.zeros(n_events, dtype=bool)
        residual_mask[residual_bg] = True
        coarse_bg &= residual_mask
    if not coarse_bg.any():
        coarse_bg[residual_bg] = True
        if use_temporal:
            reinit = True

    ego = None
    for attempt in range(2):
        try:
            ego = estimate_translation_svm(
                sl.points[coarse_bg], sl.n0[coarse_bg], n_derot[coarse_bg],
                cfg.svm_c, cfg.svm_iterations, cfg.svm_min_samples,
                cfg.svm_min_agreement)
            break
        except InsufficientSupport:
            reinit = True
            fresh = np.zeros(n_events, dtype=bool)
            fresh[residual_bg] = True
            if attempt == 1 or np.array_equal(fresh, coarse_bg):
                break
            coarse_bg = fresh

    # refined residuals against the estimated background motion, for the
    # merge-stage residual means
    if ego is not None:
        pred = np.sum(flow_at(sl.points, MotionParams(ego.direction, np.zeros(3)), 1.0)
                      * sl.n0, axis=1)
        merge_residuals = n_derot - ego.scale * pred
    else:
        merge_residuals = plane_residuals
    _, smoothed_mres = smooth_residuals(sl.xy_px, merge_residuals,
                                        cfg.smoothing_sigma_px, inp.width, inp.height)

    # foreground evidence field: refit the planar model on background events
    # only, so its residuals are uncontaminated, then threshold the smoothed
    # magnitudes against the background's own level.  One refinement round
    # strips events the first field flags from the reference set.
    fg_field = np.zeros(n_events, dtype=bool)
    sharp = plane_residuals
    ref_set = coarse_bg
    for _ in range(2):
        if ref_set.sum() >= 8:
            try:
                bg_fit = fit_plane(sl.points[ref_set], sl.n0[ref_set], sl.n[ref_set])
                sharp = sl.n - predict_normal_flow(bg_fit.params, sl.points, sl.n0)
            except DegenerateSystem:
                pass
        _, sm_sharp = smooth_residuals(sl.xy_px, sharp, cfg.smoothing_sigma_px,
                                       inp.width, inp.height)
        bg_ref = float(np.median(sm_sharp[ref_set])) if ref_set.any() else 0.0
        fg_field = sm_sharp > max(4.0 * bg_ref, 1e-9)
        new_ref = coarse_bg & ~fg_field
        if new_ref.sum() < 8 or np.array_equal(new_ref, ref_set):
            break
        ref_set = new_ref
    coarse_bg = coarse_bg & ~fg_field
    if not coarse_bg.any():
        coarse_bg = ref_set.copy()
    # events whose raw residual individually contradicts the background model
    # anchor the per-candidate motion fits; the smoothed field above decides
    # membership but bleeds across boundaries, which would dilute the fits
    raw = np.abs(sharp)
    raw_ref = float(np.median(raw[ref_set])) if ref_set.any() else 0.0
    fit_core = raw > max(4.0 * raw_ref, 1e-9)

    similarity_now = background_similarity(bg_map, sl.xy_px[coarse_bg])
    bg_map = update_map(bg_map, sl.xy_px[coarse_bg], similarity_now,
                        cfg.ema_alpha_min, cfg.ema_alpha_max)

    # stage 4: candidates are the coarse background plus the spatially
    # connected pieces of each remaining cluster; translations are fit on the
    # refined-foreground subset so straddling pieces stay uncontaminated
    coarse_bg_idx = np.flatnonzero(coarse_bg)
    speckles = []

    def _cand(idx):
        return make_candidate(idx, sl.points, sl.n0, n_derot, sl.xy_px,
                              smoothed_mres, bg_map, cfg.bg_like_threshold,
                              cfg.tikhonov_lambda, fit_core)

    candidates = [_cand(coarse_bg_idx)]
    fg_labels = clusters.labels[~coarse_bg]
    fg_indices = np.flatnonzero(~coarse_bg)
    for c in np.unique(fg_labels):
        pieces, rest = split_components(sl.xy_px, fg_indices[fg_labels == c])
        speckles.append(rest)
        for piece in pieces:
            candidates.append(_cand(piece))
    merged = hierarchical_merge(candidates, sl.points, sl.n0, n_derot, sl.xy_px,
                                smoothed_mres, cfg.merge_threshold,
                                cfg.merge_lambda_r, cfg.merge_bg_penalty,
                                cfg.merge_bbox_dilation_px, bg_map,
                                cfg.bg_like_threshold, cfg.tikhonov_lambda,
                                fit_core)

    # background segment: largest overlap with the coarse background set
    overlaps = [np.isin(seg.event_indices, coarse_bg_idx, assume_unique=True).sum()
                for seg in merged]
    bg_pos = int(np.argmax(overlaps))

    # absorption: small leftovers fold into the background when their events
    # or motion say background, or into a segment whose box mostly covers
    # them (their own motion fit is unreliable, their surroundings are not)
    bg_extra = [s for s in speckles if s.size]
    bg_seg = merged[bg_pos]
    fg_segs = [seg for i, seg in enumerate(merged) if i != bg_pos]
    absorb_cap = max(cfg.min_segment_events, int(0.08 * n_events))

    def _absorb_host(seg, pool):
        best, best_cov = None, 0.6
        for s2 in pool:
            if s2 is seg or s2.event_indices.size <= seg.event_indices.size:
                continue
            cov = _coverage(s2.bbox, seg.bbox, cfg.merge_bbox_dilation_px)
            if cov > best_cov or (best is not None and cov == best_cov
                                  and _bbox_area(s2.bbox) < _bbox_area(best.bbox)):
                best, best_cov = s2, cov
        return best

    def _drop(pool, victim):
        return [s for s in pool if s is not victim]

    changed = True
    while changed:
        changed = False
        order = sorted(fg_segs, key=lambda s: (s.event_indices.size,
                                               int(s.event_indices[0])))
        for seg in order:
            idx = seg.event_indices
            if idx.size < cfg.min_segment_events:
                bg_extra.append(idx)
                fg_segs = _drop(fg_segs, seg)
                changed = True
                break
            if idx.size > absorb_cap:
                continue
            if (np.mean(fg_field[idx]) < 0.5
                    or similarity(bg_seg, seg, cfg.merge_lambda_r, 0.0)
                    > cfg.merge_threshold):
                bg_extra.append(idx)
                fg_segs = _drop(fg_segs, seg)
                changed = True
                break
            host = _absorb_host(seg, fg_segs)
            if host is not None:
                union = np.sort(np.concatenate([host.event_indices, idx]))
                fg_segs = [(_cand(union) if s is host else s)
                           for s in _drop(fg_segs, seg)]
                changed = True
                break
    if bg_extra:
        union = np.sort(np.concatenate([bg_seg.event_indices] + bg_extra))
        bg_seg = _cand(union)
    merged = [bg_seg] + sorted(fg_segs, key=lambda s: int(s.event_indices[0]))
    bg_pos = 0

    # refined background motion, reused by the next step
    refined_idx = merged[bg_pos].event_indices
    ego_final = ego
    try:
        ego_final = estimate_translation_svm(
            sl.points[refined_idx], sl.n0[refined_idx], n_derot[refined_idx],
            cfg.svm_c, cfg.svm_iterations, cfg.svm_min_samples, cfg.svm_min_agreement)
    except InsufficientSupport:
        pass

    # track assignment: background binds to id 0, others match or birth
    tracker = prev.tracker if prev is not None else SegmentTracker(TrackerConfig(
        q=cfg.tracker_q, r=cfg.tracker_r, gate_px=cfg.tracker_gate_px,
        t_miss=cfg.tracker_t_miss))
    centroids = np.array([sl.xy_px[seg.event_indices].mean(axis=0) for seg in merged])
    ids = tracker.step(dt, centroids, bg_pos)

    labels = np.zeros(n_events, dtype=np.int32)
    segments = []
    order = np.argsort([0 if i == bg_pos else ids[i] for i in range(len(merged))])
    for i in order:
        seg = merged[i]
        idx = seg.event_indices
        labels[idx] = ids[i]
        is_bg = i == bg_pos
        if is_bg and ego_final is not None:
            motion = MotionParams(ego_final.scale * ego_final.direction, sl.imu_w)
        else:
            # per-segment rotation is not observable from derotated flow
            motion = MotionParams(seg.translation,
                                  sl.imu_w if is_bg else np.zeros(3))
        segments.append(SegmentResult(
            track_id=int(ids[i]), motion=motion, event_indices=idx,
            centroid_px=sl.xy_px[idx].mean(axis=0),
            centroid_calib=sl.points[idx].mean(axis=0), bbox=seg.bbox))

    if ego_final is not None:
        bg_motion = MotionParams(ego_final.scale * ego_final.direction, sl.imu_w)
    else:
        bg_motion = MotionParams(np.zeros(3), sl.imu_w)
    state = PipelineState(
        background=BackgroundState(
            mask_points=sl.points[labels == 0].copy(),
            motion=bg_motion, map=bg_map),
        tracker=tracker, step_index=step_index, segments=segments)

    return StepOutput(
        labels=labels, segments=segments,
        egomotion=MotionParams(ego_final.direction if ego_final is not None else np.zeros(3),
                               sl.imu_w),
        egomotion_valid=ego_final is not None,
        egomotion_scale=ego_final.scale if ego_final is not None else 0.0,
        reinitialized=reinit, state=state)


def run(recording: Recording, cfg: PipelineConfig | None = None):
    """Run the recursive pipeline over a whole recording.

    Returns the list of per-step outputs (None for slices that failed with an
    empty-slice error; the run continues) packed alongside a Predictions
    container for serialization.
    """
    cfg = cfg or PipelineConfig()
    outputs: list[StepOutput | None] = []
    state: PipelineState | None = None
    for i in range(recording.num_slices):
        sl = recording.get_slice(i)
        inp = StepInput(slice=sl, width=recording.width, height=recording.height,
                        intrinsics=recording.intrinsics, prev=state)
        try:
            out = step(inp, cfg)
        except (EmptySlice, ValidationError):
            outputs.append(None)
            continue
        outputs.append(out)
        state = out.state
    return outputs


def pack_predictions(recording: Recording, outputs) -> Predictions:
    """Flatten per-step outputs into the array form used on disk."""
    s = recording.num_slices
    labels = np.zeros(recording.num_events, dtype=np.int32)
    ego_t = np.zeros((s, 3))
    ego_w = np.zeros((s, 3))
    ego_valid = np.zeros(s, dtype=np.uint8)
    ego_scale = np.zeros(s)
    reinit = np.zeros(s, dtype=np.uint8)
    seg_rows = []
    for i, out in enumerate(outputs):
        if out is None:
            continue
        a, b = recording.slice_range(i)
        labels[a:b] = out.labels
        ego_t[i] = out.egomotion.t
        ego_w[i] = out.egomotion.w
        ego_valid[i] = 1 if out.egomotion_valid else 0
        ego_scale[i] = out.egomotion_scale
        reinit[i] = 1 if out.reinitialized else 0
        for seg in out.segments:
            seg_rows.append((i, seg.track_id, seg.motion.t, seg.motion.w,
                             seg.centroid_px, seg.centroid_calib))
    m = len(seg_rows)
    return Predictions(
        slice_bounds=recording.slice_bounds.astype(np.int64),
        labels=labels, ego_t=ego_t, ego_w=ego_w, ego_valid=ego_valid,
        ego_scale=ego_scale, reinit=reinit,
        seg_slice=np.array([r[0] for r in seg_rows], dtype=np.int32).reshape(m),
        seg_id=np.array([r[1] for r in seg_rows], dtype=np.int32).reshape(m),
        seg_t=(np.stack([r[2] for r in seg_rows]) if m else np.zeros((0, 3))),
        seg_w=(np.stack([r[3] for r in seg_rows]) if m else np.zeros((0, 3))),
        seg_centroid_px=(np.stack([r[4] for r in seg_rows]) if m else np.zeros((0, 2))),
        seg_centroid_calib=(np.stack([r[5] for r in seg_rows]) if m else np.zeros((0, 2))),
    )
