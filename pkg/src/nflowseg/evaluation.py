"""Segmentation and motion-accuracy metrics, plus report assembly.

IoU is computed per frame over foreground events, with predicted segments
matched to ground-truth objects greedily by overlap; frames without any
ground-truth object are excluded.  Velocity accuracy is a per-axis RMSE.
Object translation accuracy compares image-plane motion induced by the
translational twist component, horizontal and vertical separately.  The
report's JSON schema is documented in docs/REPORT.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Predictions, Recording
from .errors import ValidationError
from .geometry import MotionParams, flow_at
from .se3 import check_rigid, se3_log


def match_segments(pred_labels, gt_labels):
    """Greedy one-to-one matching of predicted segments to GT objects.

    Pairs are picked by descending event-overlap, ties broken by lower GT id
    then lower predicted id.  Returns {gt_id: pred_id}.
    """
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    gt_ids = [int(g) for g in np.unique(gt) if g > 0]
    pred_ids = [int(p) for p in np.unique(pred) if p > 0]
    overlaps = []
    for g in gt_ids:
        g_mask = gt == g
        for p in pred_ids:
            inter = int(np.sum(g_mask & (pred == p)))
            if inter > 0:
                overlaps.append((-inter, g, p))
    overlaps.sort()
    matches: dict[int, int] = {}
    used_pred: set[int] = set()
    for _neg, g, p in overlaps:
        if g in matches or p in used_pred:
            continue
        matches[g] = p
        used_pred.add(p)
    return matches


def frame_iou(pred_labels, gt_labels):
    """Mean IoU over ground-truth objects in one frame, or None if there are none."""
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ValidationError("prediction and ground-truth label arrays differ in length")
    gt_ids = [int(g) for g in np.unique(gt) if g > 0]
    if not gt_ids:
        return None
    matches = match_segments(pred, gt)
    scores = []
    for g in gt_ids:
        g_mask = gt == g
        p = matches.get(g)
        if p is None:
            scores.append(0.0)
            continue
        p_mask = pred == p
        union = np.sum(g_mask | p_mask)
        scores.append(float(np.sum(g_mask & p_mask)) / float(union))
    return float(np.mean(scores))


def rmse_velocity(est, gt):
    """Per-axis root-mean-square error between aligned velocity series."""
    e = np.asarray(est, dtype=float)
    g = np.asarray(gt, dtype=float)
    if e.shape != g.shape:
        raise ValidationError(f"velocity series shapes differ: {e.shape} vs {g.shape}")
    return np.sqrt(np.mean((e - g) ** 2, axis=0))


def relative_object_motion(obj_poses, cam_poses, dt: float):
    """Per-frame twist of the object in the camera frame plus image-plane motion.

    Poses are world-from-object and world-from-camera series of shape
    (S+1, 4, 4).  For each frame the relative pose delta is mapped to a twist
    by the SE(3) logarithm; the in-plane components are the translational
    image motion at the object's projected centroid, as per-frame
    displacements (velocity times dt).  Returns (twists (S, 6) per second,
    dxy (S, 2), centroids (S, 2)).
    """
    t_wo = np.asarray(obj_poses, dtype=float)
    t_wc = np.asarray(cam_poses, dtype=float)
    if t_wo.shape != t_wc.shape or t_wo.ndim != 3:
        raise ValidationError("pose series must both be (S+1, 4, 4)")
    for pose in (t_wo[0], t_wc[0], t_wo[-1], t_wc[-1]):
        check_rigid(pose)
    steps = t_wo.shape[0] - 1
    twists = np.zeros((steps, 6))
    dxy = np.zeros((steps, 2))
    centroids = np.zeros((steps, 2))
    for i in range(steps):
        t_co_now = np.linalg.solve(t_wc[i], t_wo[i])
        t_co_next = np.linalg.solve(t_wc[i + 1], t_wo[i + 1])
        delta = t_co_next @ np.linalg.inv(t_co_now)
        twists[i] = se3_log(delta) / dt
        pos = t_co_now[:3, 3]
        if pos[2] <= 0:
            raise ValidationError("object centroid is behind the camera")
        c = pos[:2] / pos[2]
        centroids[i] = c
        v = MotionParams(twists[i, :3], np.zeros(3))
        dxy[i] = flow_at(c, v, 1.0) * dt
    return twists, dxy, centroids


@dataclass
class ObjectSeries:
    gt_id: int
    dx_est: list
    dy_est: list
    dx_gt: list
    dy_gt: list


@dataclass
class EvalReport:
    per_frame_iou: list           # one entry per frame; None where no GT object
    mean_iou: float | None
    rmse_vx: float | None
    rmse_vy: float | None
    rmse_vz: float | None
    egomotion_frames: int
    objects: list[ObjectSeries] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "egomotion_frames": self.egomotion_frames,
            "mean_iou": self.mean_iou,
            "objects": [{
                "dx_est": o.dx_est, "dx_gt": o.dx_gt,
                "dy_est": o.dy_est, "dy_gt": o.dy_gt, "gt_id": o.gt_id,
            } for o in self.objects],
            "per_frame_iou": self.per_frame_iou,
            "rmse_velocity": {"vx": self.rmse_vx, "vy": self.rmse_vy, "vz": self.rmse_vz},
        }


def evaluate(recording: Recording, predictions: Predictions) -> EvalReport:
    """Score predictions against a recording's ground truth.

    Egomotion RMSE uses the known per-frame speed from ground truth to scale
    the estimated direction, since monocular translation is direction-only.
    Frames with an invalid egomotion estimate are skipped.  Estimated object
    motion converts each matched segment's fitted translation to the twist
    sign convention (the apparent motion of a segment is the negative of its
    relative twist).
    """
    if recording.gt is None:
        raise ValidationError("recording carries no ground truth to evaluate against")
    gt = recording.gt
    s = recording.num_slices
    if predictions.num_slices != s:
        raise ValidationError(
            f"predictions cover {predictions.num_slices} slices, recording has {s}")

    per_frame = []
    for i in range(s):
        a, b = recording.slice_range(i)
        per_frame.append(frame_iou(predictions.slice_labels(i), gt.labels[a:b]))
    scored = [v for v in per_frame if v is not None]
    mean_iou = float(np.mean(scored)) if scored else None

    est_rows = []
    gt_rows = []
    for i in range(s):
        if not predictions.ego_valid[i]:
            continue
        speed = float(np.linalg.norm(gt.cam_vel[i]))
        est_rows.append(predictions.ego_t[i] * speed)
        gt_rows.append(gt.cam_vel[i])
    if est_rows:
        rmse = rmse_velocity(np.asarray(est_rows), np.asarray(gt_rows))
        rmse_vals = [float(v) for v in rmse]
    else:
        rmse_vals = [None, None, None]

    dt = float(np.mean(recording.windows[:, 1] - recording.windows[:, 0])) if s else 0.0
    objects = []
    for k in range(recording.num_objects):
        _tw, dxy_gt, _cent = relative_object_motion(gt.obj_pose[k], gt.cam_pose, dt)
        series = ObjectSeries(gt_id=k + 1, dx_est=[], dy_est=[], dx_gt=[], dy_gt=[])
        for i in range(s):
            if not gt.obj_present[k, i]:
                series.dx_est.append(None)
                series.dy_est.append(None)
                series.dx_gt.append(None)
                series.dy_gt.append(None)
                continue
            series.dx_gt.append(float(dxy_gt[i, 0]))
            series.dy_gt.append(float(dxy_gt[i, 1]))
            a, b = recording.slice_range(i)
            matches = match_segments(predictions.slice_labels(i), gt.labels[a:b])
            pred_id = matches.get(k + 1)
            found = None
            if pred_id is not None:
                rows = predictions.segments_of(i)
                for r in rows:
                    if int(predictions.seg_id[r]) == pred_id:
                        found = r
                        break
            if found is None:
                series.dx_est.append(None)
                series.dy_est.append(None)
                continue
            v_est = -predictions.seg_t[found]  # twist convention
            c = predictions.seg_centroid_calib[found]
            d = flow_at(c, MotionParams(v_est, np.zeros(3)), 1.0) * dt
            series.dx_est.append(float(d[0]))
            series.dy_est.append(float(d[1]))
        objects.append(series)

    return EvalReport(
        per_frame_iou=per_frame, mean_iou=mean_iou,
        rmse_vx=rmse_vals[0], rmse_vy=rmse_vals[1], rmse_vz=rmse_vals[2],
        egomotion_frames=len(est_rows), objects=objects)
