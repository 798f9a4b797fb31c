"""Acceptance criteria, one test per criterion, at their stated tolerances.

Each test prints a `[PASS] criterion N` line when its assertions hold, so a
verbose run doubles as the acceptance report.  Criteria that involve the
full pipeline run on synthetic scenes with known ground truth.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

import nflowseg as nf
from nflowseg.clustering import gaussian_kernel_1d, smooth_residuals
from nflowseg.geometry import (MotionParams, Plane, derotate, flow_at,
                               normal_flow_at, plane_motion_vector,
                               planar_flow_matrix)
from nflowseg.merging import hierarchical_merge, make_candidate
from nflowseg.se3 import se3_exp, se3_log


def report(num, text):
    print(f"[PASS] criterion {num}: {text}")


def camera_motion():
    return MotionParams([0.15, -0.05, 0.05], [0.01, -0.015, 0.02])


def one_imo_scene(**kw):
    return nf.SceneSpec(
        camera=camera_motion(),
        background=Plane([0.05, -0.04, 1.0], 1.0),
        objects=[nf.PlanarObject(
            plane=Plane([0.0, 0.0, 1.0], 0.7),
            motion=MotionParams([-0.25, 0.12, 0.0], np.zeros(3)),
            region=(70.0, 60.0, 25.0, 20.0), num_anchors=250)], **kw)


def two_imo_scene(appear_second=0):
    return nf.SceneSpec(
        camera=camera_motion(),
        background=Plane([0.05, -0.04, 1.0], 1.0),
        objects=[
            nf.PlanarObject(
                plane=Plane([0.0, 0.0, 1.0], 0.7),
                motion=MotionParams([-0.25, 0.12, 0.0], np.zeros(3)),
                region=(70.0, 60.0, 25.0, 20.0), num_anchors=250),
            nf.PlanarObject(
                plane=Plane([0.0, 0.0, 1.0], 0.85),
                motion=MotionParams([0.1, 0.28, -0.05], np.zeros(3)),
                region=(170.0, 110.0, 22.0, 18.0), num_anchors=250,
                appear_step=appear_second),
        ])


def scene_ious(spec, steps, seed, cfg=None):
    rec = nf.simulate(spec, steps, seed)
    outs = nf.run(rec, cfg)
    ious = []
    matches = []
    for i, out in enumerate(outs):
        a, b = rec.slice_range(i)
        ious.append(nf.frame_iou(out.labels, rec.gt.labels[a:b]))
        matches.append(nf.match_segments(out.labels, rec.gt.labels[a:b]))
    return rec, outs, ious, matches


def test_criterion_1_geometry_oracle():
    rng = np.random.default_rng(42)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        motion = MotionParams(rng.normal(size=3), rng.normal(size=3) * 0.5)
        plane = Plane(rng.normal(size=3) * 0.3 + [0.0, 0.0, 1.0],
                      rng.uniform(0.3, 3.0))
        points = rng.uniform(-1, 1, (8, 2))
        n0 = rng.normal(size=(8, 2))
        n0 /= np.linalg.norm(n0, axis=1, keepdims=True)
        vec = plane_motion_vector(motion, plane)
        flow_pred = planar_flow_matrix(points) @ vec
        flow_true = flow_at(points, motion, plane.inv_depth(points))
        worst = max(worst, float(np.abs(flow_pred - flow_true).max()))
        normal_pred = np.sum(flow_pred * n0, axis=1)
        normal_true = normal_flow_at(points, n0, motion, plane.inv_depth(points))
        worst = max(worst, float(np.abs(normal_pred - normal_true).max()))
    elapsed = time.perf_counter() - start
    assert worst < 1e-10
    assert elapsed < 1.0
    report(1, f"plane-motion composition matches flow to {worst:.2e} "
              f"on 1000 draws in {elapsed:.2f}s")


def test_criterion_2_plane_fit_exactness():
    rng = np.random.default_rng(7)
    motion = camera_motion()
    plane = Plane([0.08, -0.06, 1.0], 1.1)
    start = time.perf_counter()
    points = rng.uniform(-1, 1, (5000, 2))
    n0 = rng.normal(size=(5000, 2))
    n0 /= np.linalg.norm(n0, axis=1, keepdims=True)
    n = normal_flow_at(points, n0, motion, plane.inv_depth(points))
    clean = nf.fit_plane(points, n0, n)
    max_clean = float(np.abs(clean.residuals).max())
    assert max_clean < 1e-9

    sigma = 0.01 * float(np.sqrt(np.mean(n ** 2)))
    noisy = nf.fit_plane(points, n0, n + rng.normal(scale=sigma, size=5000))
    mean_noisy = float(np.abs(noisy.residuals).mean())
    assert mean_noisy < 2.0 * sigma
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    report(2, f"noiseless max residual {max_clean:.2e}; noisy mean "
              f"{mean_noisy:.4f} < 2 sigma ({2 * sigma:.4f}); {elapsed:.2f}s")


def fibonacci_sphere(count):
    i = np.arange(count)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * (i + 0.5) / count
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def test_criterion_3_translation_direction():
    rng = np.random.default_rng(19)
    t_true = np.array([0.5, -0.3, 0.15])
    t_true /= np.linalg.norm(t_true)
    start = time.perf_counter()
    points = rng.uniform(-1, 1, (5000, 2))
    n0 = rng.normal(size=(5000, 2))
    n0 /= np.linalg.norm(n0, axis=1, keepdims=True)
    inv_depth = rng.uniform(0.5, 2.0, 5000)
    n = normal_flow_at(points, n0, MotionParams(t_true, np.zeros(3)), inv_depth)

    def angle_deg(a, b):
        return float(np.degrees(np.arccos(np.clip(a @ b, -1.0, 1.0))))

    clean = nf.estimate_translation_svm(points, n0, n)
    err_clean = angle_deg(clean.direction, t_true)
    assert err_clean < 1.0

    flip = rng.random(5000) < 0.10
    noisy = nf.estimate_translation_svm(points, n0, np.where(flip, -n, n))
    err_noisy = angle_deg(noisy.direction, t_true)
    assert err_noisy < 5.0

    # independent exhaustive oracle at ~2 degree resolution
    dirs = fibonacci_sphere(10000)
    g = np.stack([-n0[:, 0], -n0[:, 1],
                  points[:, 0] * n0[:, 0] + points[:, 1] * n0[:, 1]], axis=1)
    feats = np.sign(n)[:, None] * g
    agreement = (feats @ dirs.T > 0).mean(axis=0)
    oracle = dirs[int(np.argmax(agreement))]
    assert angle_deg(oracle, t_true) < 3.0
    assert angle_deg(clean.direction, oracle) < 3.0
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    report(3, f"direction error {err_clean:.2f} deg clean, {err_noisy:.2f} deg "
              f"with 10% sign noise; oracle agrees; {elapsed:.1f}s")


def test_criterion_4_segmentation_quality():
    for label, spec, seed in (("1 IMO", one_imo_scene(), 3),
                              ("2 IMO", two_imo_scene(), 11)):
        start = time.perf_counter()
        _rec, _outs, ious, _m = scene_ious(spec, 10, seed)
        elapsed = time.perf_counter() - start
        tail = [v for v in ious[3:] if v is not None]
        mean_tail = float(np.mean(tail))
        assert mean_tail >= 0.75, f"{label}: mean IoU {mean_tail:.3f}"
        assert elapsed < 30.0
        report(4, f"{label} scene mean IoU from step 3 = {mean_tail:.3f} "
                  f"(>= 0.75) in {elapsed:.1f}s")


def test_criterion_5_egomotion_rmse():
    base = one_imo_scene()
    probe = nf.simulate(base, 1, seed=0)
    sigma = 0.05 * float(np.sqrt(np.mean(probe.n ** 2)))
    spec = one_imo_scene(flow_noise=sigma)
    rec = nf.simulate(spec, 10, seed=9)
    outs = nf.run(rec)
    est, gt = [], []
    for i, out in enumerate(outs):
        if out.egomotion_valid:
            speed = float(np.linalg.norm(rec.gt.cam_vel[i]))
            est.append(out.egomotion.t * speed)
            gt.append(rec.gt.cam_vel[i])
    assert len(est) >= 8
    rmse = nf.rmse_velocity(np.asarray(est), np.asarray(gt))
    assert rmse[0] <= 0.05 and rmse[1] <= 0.05
    report(5, f"per-axis velocity RMSE with 5% flow noise = "
              f"({rmse[0]:.4f}, {rmse[1]:.4f}, {rmse[2]:.4f}) m/s, "
              f"in-plane <= 0.05")


def test_criterion_6_smoothing_equivalence():
    from test_clustering import brute_force_smooth
    rng = np.random.default_rng(23)
    worst = 0.0
    for width, height, sigma in ((12, 9, 0.8), (32, 32, 2.0), (20, 32, 3.0)):
        xy = rng.uniform([0, 0], [width, height], (150, 2))
        res = rng.normal(size=150)
        grid, per_event = smooth_residuals(xy, res, sigma, width, height)
        oracle_grid, oracle_pe = brute_force_smooth(xy, res, sigma, width, height)
        worst = max(worst, float(np.abs(grid.values - oracle_grid).max()),
                    float(np.abs(per_event - oracle_pe).max()))
    assert worst < 1e-10
    report(6, f"grid smoothing equals brute-force convolution to {worst:.2e}")


def test_criterion_7_merge_correctness():
    from test_merging import grid_partition, two_object_scene
    rng = np.random.default_rng(31)
    points, n0, n, xy_px, labels = two_object_scene(rng)
    residuals = np.abs(n)
    pieces = grid_partition(xy_px, labels, 10)
    assert len(pieces) == 30
    cands = [make_candidate(idx, points, n0, n, xy_px, residuals)
             for idx in pieces]
    merged = hierarchical_merge(cands, points, n0, n, xy_px, residuals,
                                threshold=-0.15)
    assert len(merged) == 3
    for seg in merged:
        seg_labels = set(labels[seg.event_indices].tolist())
        assert len(seg_labels) == 1
        lab = seg_labels.pop()
        assert seg.event_indices.size == int(np.sum(labels == lab))

    # identical motion, disjoint boxes: never merged
    t = np.array([0.2, -0.1, 0.0])
    from test_merging import axis_paired_samples
    pa, na, fa = axis_paired_samples(rng, 100, t, (-0.6, 0.0), 0.1)
    pb, nb, fb = axis_paired_samples(rng, 100, t, (0.6, 0.0), 0.1)
    pts = np.vstack([pa, pb])
    dirs = np.vstack([na, nb])
    flows = np.concatenate([fa, fb])
    px = (pts + 1.0) * 100.0
    zero_res = np.zeros(pts.shape[0])
    cands = [make_candidate(np.arange(200), pts, dirs, flows, px, zero_res),
             make_candidate(np.arange(200, 400), pts, dirs, flows, px, zero_res)]
    still_two = hierarchical_merge(cands, pts, dirs, flows, px, zero_res,
                                   threshold=-np.inf)
    assert len(still_two) == 2
    report(7, "30-cluster two-object scene collapses to exactly 3 segments; "
              "disjoint same-motion clusters stay separate")


def test_criterion_8_tracking():
    spec = two_imo_scene(appear_second=10)
    rec, outs, _ious, matches = scene_ious(spec, 30, seed=42)
    # background is id 0 in every step
    for out in outs:
        assert out.segments[0].track_id == 0
        assert np.any(out.labels == 0)
    # object 1 keeps one id for the whole run
    ids_obj1 = [m.get(1) for m in matches]
    assert all(v is not None for v in ids_obj1)
    assert len(set(ids_obj1)) == 1
    # the second object appears at step 10 with a fresh id and keeps it
    for i in range(10):
        assert 2 not in matches[i]
    ids_obj2 = [m.get(2) for m in matches[10:]]
    assert all(v is not None for v in ids_obj2)
    assert len(set(ids_obj2)) == 1
    assert ids_obj2[0] != ids_obj1[0]
    assert ids_obj2[0] not in set(ids_obj1)
    report(8, f"30 steps: object ids {ids_obj1[0]} and {ids_obj2[0]} stable, "
              f"zero switches; background always id 0; emerging object got a "
              f"fresh id at step 10")


def test_criterion_9_determinism(tmp_path):
    import json

    from nflowseg.cli import main
    scene = {
        "width": 160, "height": 120, "focal_px": 80.0,
        "camera": {"t": [0.15, -0.05, 0.05], "w": [0.01, -0.015, 0.02]},
        "background": {"normal": [0.05, -0.04, 1.0], "dist": 1.0},
        "event_rate": 3.0, "num_bg_anchors": 400,
        "objects": [{"plane": {"normal": [0.0, 0.0, 1.0], "dist": 0.7},
                     "motion": {"t": [-0.25, 0.12, 0.0], "w": [0, 0, 0]},
                     "region": [50.0, 45.0, 18.0, 14.0],
                     "event_rate": 10.0, "num_anchors": 180}],
        "steps": 5, "seed": 13,
    }
    scene_file = tmp_path / "scene.json"
    scene_file.write_text(json.dumps(scene))
    blobs = []
    for tag in ("a", "b"):
        rec = tmp_path / f"rec_{tag}.evn"
        pred = tmp_path / f"pred_{tag}.evn"
        rep = tmp_path / f"report_{tag}.json"
        assert main(["simulate", "--scene", str(scene_file), "--out", str(rec)]) == 0
        assert main(["run", "--recording", str(rec), "--out", str(pred)]) == 0
        assert main(["eval", "--recording", str(rec), "--pred", str(pred),
                     "--out", str(rep)]) == 0
        blobs.append((rec.read_bytes(), pred.read_bytes(), rep.read_bytes()))
    assert blobs[0] == blobs[1]
    report(9, "simulate -> run -> eval is byte-identical across two executions")


def test_criterion_10_se3_and_iou_kernels():
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(1000):
        w = rng.normal(size=3)
        norm = np.linalg.norm(w)
        if norm > 0:
            w *= rng.uniform(0.0, 3.0) / norm
        xi = np.concatenate([rng.normal(size=3) * 2.0, w])
        t = se3_exp(xi)
        worst = max(worst, float(np.abs(se3_exp(se3_log(t)) - t).max()))
    assert worst < 1e-10

    gt = np.zeros(200, dtype=int)
    gt[:90] = 1
    pred = np.zeros(200, dtype=int)
    pred[10:100] = 5
    assert nf.frame_iou(pred, gt) == pytest.approx(0.8)
    assert nf.frame_iou(gt, gt) == pytest.approx(1.0)
    two = np.array([1] * 10 + [2] * 10)
    half = np.array([4] * 10 + [0] * 10)
    assert nf.frame_iou(half, two) == pytest.approx(0.5)
    report(10, f"SE(3) round trip worst error {worst:.2e} over 1000 draws; "
               f"IoU kernel matches hand-counted fixtures")
