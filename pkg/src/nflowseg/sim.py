"""Synthetic scene simulator: the ground-truth oracle for the pipeline.

Scenes are a planar background plus planar, independently moving objects.
Texture is modeled as persistent anchor points carrying an edge orientation;
each slice emits events jittered around the anchors, advected by their
region's rigid-motion flow, so spatial structure persists across slices and
background warping has something to match.  Normal flow is the analytic
motion-field projection onto the anchor's edge normal, optionally with
Gaussian noise and sign flips.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import GroundTruth, Intrinsics, Recording
from .geometry import MotionParams, Plane, flow_at
from .se3 import se3_exp


@dataclass
class PlanarObject:
    """An independently moving planar patch.

    motion uses the same sign convention as camera egomotion: it is the
    apparent rigid motion generating the patch's image flow through the
    instantaneous motion-field equations.  region is the initial axis-aligned
    support [cx, cy, half_w, half_h] in pixels; it advects with the object.
    """

    plane: Plane
    motion: MotionParams
    region: tuple[float, float, float, float]
    event_rate: float = 12.0        # events per px^2 per second
    appear_step: int = 0
    vanish_step: int | None = None
    num_anchors: int = 150

    def active(self, step: int) -> bool:
        if step < self.appear_step:
            return False
        return self.vanish_step is None or step < self.vanish_step


@dataclass
class SceneSpec:
    width: int = 240
    height: int = 180
    focal_px: float = 120.0
    slice_dt: float = 0.025
    # a single MotionParams (constant) or one per step
    camera: MotionParams | list[MotionParams] = field(default_factory=MotionParams.zero)
    background: Plane = field(default_factory=lambda: Plane(np.array([0.0, 0.0, 1.0]), 1.0))
    objects: list[PlanarObject] = field(default_factory=list)
    event_rate: float = 3.5         # background events per px^2 per second
    num_bg_anchors: int = 700
    flow_noise: float = 0.0         # stddev of additive noise on n, calibrated/s
    sign_flip_fraction: float = 0.0 # fraction of events with the sign of n flipped
    imu_noise: float = 0.0          # stddev of additive noise on IMU w, rad/s
    jitter_px: float = 0.4

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(fx=self.focal_px, fy=self.focal_px,
                          cx=self.width / 2.0, cy=self.height / 2.0)

    def camera_at(self, step: int) -> MotionParams:
        if isinstance(self.camera, MotionParams):
            return self.camera
        return self.camera[step]


def _orientation_field(rng, width, height, cell=8.0):
    """Smooth random unit-vector field sampled on a coarse grid."""
    gw = int(np.ceil(width / cell)) + 2
    gh = int(np.ceil(height / cell)) + 2
    return rng.normal(size=(gh, gw, 2))


def _sample_orientation(field_grid, xy_px, cell=8.0):
    """Bilinear sample of the vector field, normalized to unit length."""
    gh, gw, _ = field_grid.shape
    gx = np.clip(xy_px[:, 0] / cell, 0, gw - 1.001)
    gy = np.clip(xy_px[:, 1] / cell, 0, gh - 1.001)
    x0 = gx.astype(int)
    y0 = gy.astype(int)
    fx = (gx - x0)[:, None]
    fy = (gy - y0)[:, None]
    v = (field_grid[y0, x0] * (1 - fx) * (1 - fy)
         + field_grid[y0, x0 + 1] * fx * (1 - fy)
         + field_grid[y0 + 1, x0] * (1 - fx) * fy
         + field_grid[y0 + 1, x0 + 1] * fx * fy)
    norms = np.linalg.norm(v, axis=1)
    bad = norms < 1e-9
    v[bad] = (1.0, 0.0)
    norms[bad] = 1.0
    return v / norms[:, None]


@dataclass
class _Region:
    label: int
    plane: Plane
    motion: MotionParams          # apparent motion, egomotion convention
    anchors_px: np.ndarray        # (A, 2)
    orientations: np.ndarray      # (A, 2) unit, calibrated convention
    rate: float
    obj: PlanarObject | None = None


def _region_box(obj_center, half_w, half_h):
    return (obj_center[0] - half_w, obj_center[1] - half_h,
            obj_center[0] + half_w, obj_center[1] + half_h)


def simulate(spec: SceneSpec, steps: int, seed: int = 0) -> Recording:
    """Run the forward model and return a recording with full ground truth."""
    rng = np.random.default_rng(seed)
    intr = spec.intrinsics()
    w_px, h_px = spec.width, spec.height

    bg_field = _orientation_field(rng, w_px, h_px)
    bg_anchors = rng.uniform([0, 0], [w_px, h_px], size=(spec.num_bg_anchors, 2))
    regions = [_Region(
        label=0, plane=spec.background, motion=spec.camera_at(0),
        anchors_px=bg_anchors,
        orientations=_sample_orientation(bg_field, bg_anchors),
        rate=spec.event_rate,
    )]
    obj_centers = []
    for k, obj in enumerate(spec.objects, start=1):
        cx, cy, hw, hh = obj.region
        field_grid = _orientation_field(rng, w_px, h_px)
        anchors = rng.uniform([cx - hw, cy - hh], [cx + hw, cy + hh],
                              size=(obj.num_anchors, 2))
        regions.append(_Region(
            label=k, plane=obj.plane, motion=obj.motion,
            anchors_px=anchors,
            orientations=_sample_orientation(field_grid, anchors),
            rate=obj.event_rate, obj=obj,
        ))
        obj_centers.append(np.array([cx, cy], dtype=float))

    n_obj = len(spec.objects)
    dt = spec.slice_dt
    cam_pose = np.zeros((steps + 1, 4, 4))
    cam_pose[0] = np.eye(4)
    obj_pose = np.zeros((n_obj, steps + 1, 4, 4))
    obj_rel = np.zeros((n_obj, 4, 4))  # camera-from-object
    for k, obj in enumerate(spec.objects):
        cx, cy, _, _ = obj.region
        pt = intr.to_calibrated(np.array([cx, cy]))
        iz = float(obj.plane.inv_depth(pt))
        z = 1.0 / iz
        obj_rel[k] = np.eye(4)
        obj_rel[k][:3, 3] = (pt[0] * z, pt[1] * z, z)
        obj_pose[k, 0] = cam_pose[0] @ obj_rel[k]

    cam_vel = np.zeros((steps, 3))
    obj_vel = np.zeros((n_obj, steps, 3))
    obj_present = np.zeros((n_obj, steps), dtype=np.uint8)

    all_t, all_xy, all_n, all_n0, all_labels = [], [], [], [], []
    bounds = [0]
    windows = np.zeros((steps, 2))
    imu = np.zeros((steps, 3))
    focal = np.array([intr.fx, intr.fy])

    for step in range(steps):
        cam_motion = spec.camera_at(step)
        regions[0].motion = cam_motion
        cam_vel[step] = cam_motion.t
        t0 = step * dt
        windows[step] = (t0, t0 + dt)
        imu[step] = cam_motion.w
        if spec.imu_noise > 0:
            imu[step] = imu[step] + rng.normal(scale=spec.imu_noise, size=3)

        active_boxes = []
        for region in regions[1:]:
            if region.obj.active(step):
                c = obj_centers[region.label - 1]
                active_boxes.append(_region_box(c, region.obj.region[2], region.obj.region[3]))
            else:
                active_boxes.append(None)

        step_t, step_xy, step_n, step_n0, step_lab = [], [], [], [], []
        for region in regions:
            if region.obj is not None and not region.obj.active(step):
                continue
            if region.obj is None:
                area = w_px * h_px
            else:
                area = 4.0 * region.obj.region[2] * region.obj.region[3]
            count = int(round(region.rate * area * dt))
            if count == 0:
                continue
            pick = rng.integers(0, region.anchors_px.shape[0], size=count)
            xy = region.anchors_px[pick] + rng.normal(scale=spec.jitter_px, size=(count, 2))
            n0 = region.orientations[pick]
            inside = ((xy[:, 0] >= 0) & (xy[:, 0] < w_px)
                      & (xy[:, 1] >= 0) & (xy[:, 1] < h_px))
            if region.obj is None:
                # background anchors occluded by any active object are hidden
                for box in active_boxes:
                    if box is None:
                        continue
                    x0, y0, x1, y1 = box
                    inside &= ~((xy[:, 0] >= x0) & (xy[:, 0] <= x1)
                                & (xy[:, 1] >= y0) & (xy[:, 1] <= y1))
            xy, n0 = xy[inside], n0[inside]
            count = xy.shape[0]
            if count == 0:
                continue
            pts = intr.to_calibrated(xy)
            u = flow_at(pts, region.motion, region.plane.inv_depth(pts))
            n = np.sum(u * n0, axis=1)
            if spec.flow_noise > 0:
                n = n + rng.normal(scale=spec.flow_noise, size=count)
            if spec.sign_flip_fraction > 0:
                flip = rng.random(count) < spec.sign_flip_fraction
                n = np.where(flip, -n, n)
            times = np.sort(rng.uniform(t0, t0 + dt, size=count))
            step_t.append(times)
            step_xy.append(xy)
            step_n.append(n)
            step_n0.append(n0)
            step_lab.append(np.full(count, region.label, dtype=np.int32))

        if step_t:
            times = np.concatenate(step_t)
            order = np.argsort(times, kind="stable")
            all_t.append(times[order])
            all_xy.append(np.concatenate(step_xy)[order])
            all_n.append(np.concatenate(step_n)[order])
            all_n0.append(np.concatenate(step_n0)[order])
            all_labels.append(np.concatenate(step_lab)[order])
            bounds.append(bounds[-1] + times.size)
        else:
            bounds.append(bounds[-1])

        # advance poses and advect anchors / regions to the next slice
        cam_pose[step + 1] = cam_pose[step] @ se3_exp(
            dt * np.concatenate([cam_motion.t, cam_motion.w]))
        for k, obj in enumerate(spec.objects):
            if obj.active(step):
                obj_present[k, step] = 1
                twist = -np.concatenate([obj.motion.t, obj.motion.w])
                obj_rel[k] = se3_exp(dt * twist) @ obj_rel[k]
                obj_vel[k, step] = twist[:3]
            obj_pose[k, step + 1] = cam_pose[step + 1] @ obj_rel[k]

        for region in regions:
            if region.obj is not None and not region.obj.active(step):
                continue
            pts = intr.to_calibrated(region.anchors_px)
            u = flow_at(pts, region.motion, region.plane.inv_depth(pts))
            region.anchors_px = region.anchors_px + dt * u * focal
            if region.obj is None:
                # respawn background anchors that left the frame
                out = ~((region.anchors_px[:, 0] >= 0) & (region.anchors_px[:, 0] < w_px)
                        & (region.anchors_px[:, 1] >= 0) & (region.anchors_px[:, 1] < h_px))
                n_out = int(out.sum())
                if n_out:
                    fresh = rng.uniform([0, 0], [w_px, h_px], size=(n_out, 2))
                    region.anchors_px[out] = fresh
                    region.orientations[out] = _sample_orientation(bg_field, fresh)
            else:
                c = obj_centers[region.label - 1]
                cpt = intr.to_calibrated(c)
                cu = flow_at(cpt, region.motion, float(region.plane.inv_depth(cpt)))
                obj_centers[region.label - 1] = c + dt * cu * focal

    gt = GroundTruth(
        labels=(np.concatenate(all_labels) if all_labels else np.zeros(0, dtype=np.int32)),
        cam_pose=cam_pose,
        obj_pose=obj_pose,
        cam_vel=cam_vel,
        obj_vel=obj_vel,
        obj_present=obj_present,
    )
    return Recording(
        width=w_px, height=h_px, intrinsics=intr,
        slice_bounds=np.asarray(bounds, dtype=np.int64),
        windows=windows, imu_w=imu,
        t=(np.concatenate(all_t) if all_t else np.zeros(0)),
        xy_px=(np.concatenate(all_xy) if all_xy else np.zeros((0, 2))),
        n=(np.concatenate(all_n) if all_n else np.zeros(0)),
        n0=(np.concatenate(all_n0) if all_n0 else np.zeros((0, 2))),
        gt=gt,
    )
