"""Kalman predict/update and tracker association tests."""

from __future__ import annotations

import numpy as np
import pytest

from nflowseg.tracking import (SegmentTracker, Track, TrackerConfig, predict,
                               process_noise, transition_matrix, update)


def fresh_track(track_id=1, cx=10.0, cy=20.0, vx=0.0, vy=0.0):
    return Track(id=track_id, state=np.array([cx, cy, vx, vy]),
                 covariance=np.diag([4.0, 4.0, 25.0, 25.0]))


class TestPredict:
    def test_zero_velocity_keeps_position(self):
        tr = predict(fresh_track(), 0.1)
        np.testing.assert_allclose(tr.state[:2], [10.0, 20.0])

    def test_linear_motion(self):
        tr = predict(fresh_track(vx=10.0), 0.1)
        assert tr.state[0] == pytest.approx(11.0)
        assert tr.state[1] == pytest.approx(20.0)

    def test_covariance_trace_grows(self):
        base = fresh_track()
        tr = predict(base, 0.05, q=1.0)
        assert np.trace(tr.covariance) > np.trace(base.covariance)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            predict(fresh_track(), 0.0)


class TestUpdate:
    def test_zero_innovation_keeps_state_and_shrinks_covariance(self):
        base = fresh_track()
        tr = update(base, base.state[:2])
        np.testing.assert_allclose(tr.state, base.state, atol=1e-12)
        assert np.trace(tr.covariance) < np.trace(base.covariance)

    def test_repeated_measurements_converge(self):
        tr = fresh_track(cx=0.0, cy=0.0)
        target = np.array([50.0, -30.0])
        for _ in range(50):
            tr = predict(tr, 1.0)
            tr = update(tr, target)
        assert np.linalg.norm(tr.state[:2] - target) < 1e-3

    def test_joseph_form_preserves_symmetric_pd(self):
        rng = np.random.default_rng(0)
        tr = fresh_track()
        for _ in range(30):
            tr = predict(tr, 0.05)
            tr = update(tr, tr.state[:2] + rng.normal(0, 2.0, 2))
            cov = tr.covariance
            np.testing.assert_allclose(cov, cov.T, atol=1e-12)
            assert np.linalg.eigvalsh(cov).min() > 0

    def test_update_resets_misses(self):
        tr = fresh_track()
        tr.misses = 2
        tr = update(tr, [10.0, 20.0])
        assert tr.misses == 0


class TestTransitionModel:
    def test_transition_matrix(self):
        f = transition_matrix(0.5)
        np.testing.assert_array_equal(
            f, [[1, 0, 0.5, 0], [0, 1, 0, 0.5], [0, 0, 1, 0], [0, 0, 0, 1]])

    def test_process_noise_scales(self):
        q = process_noise(0.1, 2.0)
        np.testing.assert_allclose(np.diag(q), [0.02, 0.02, 0.2, 0.2])


class TestSegmentTracker:
    def test_background_always_binds_to_zero(self):
        tracker = SegmentTracker()
        for _ in range(5):
            ids = tracker.step(0.025, np.array([[100.0, 90.0], [30.0, 30.0]]), 0)
            assert ids[0] == 0
            assert ids[1] != 0

    def test_nearby_segment_matches_track(self):
        tracker = SegmentTracker()
        first = tracker.step(0.025, np.array([[50.0, 50.0]]), None)
        second = tracker.step(0.025, np.array([[51.0, 50.5]]), None)
        assert second[0] == first[0]

    def test_segment_beyond_gate_births_new_id(self):
        tracker = SegmentTracker(TrackerConfig(gate_px=30.0))
        first = tracker.step(0.025, np.array([[50.0, 50.0]]), None)
        second = tracker.step(0.025, np.array([[150.0, 150.0]]), None)
        assert second[0] != first[0]

    def test_track_dies_after_miss_budget(self):
        cfg = TrackerConfig(t_miss=3)
        tracker = SegmentTracker(cfg)
        tracker.step(0.025, np.array([[50.0, 50.0]]), None)
        for _ in range(cfg.t_miss + 1):
            tracker.step(0.025, np.zeros((0, 2)), None)
        assert len(tracker.tracks) == 0
        # the same location now births a fresh id
        ids = tracker.step(0.025, np.array([[50.0, 50.0]]), None)
        assert ids[0] == 2

    def test_ids_never_reused(self):
        tracker = SegmentTracker(TrackerConfig(t_miss=0))
        seen = set()
        rng = np.random.default_rng(1)
        for _ in range(10):
            c = rng.uniform(0, 200, (1, 2))
            ids = tracker.step(0.025, c, None)
            assert ids[0] not in seen or ids[0] in {t.id for t in tracker.tracks}
            seen.add(ids[0])
            tracker.step(0.025, np.zeros((0, 2)), None)  # let it die
        assert len(seen) == 10

    def test_stable_ids_over_linear_motion(self):
        tracker = SegmentTracker()
        pos = np.array([[40.0, 40.0], [160.0, 120.0]])
        vel = np.array([[20.0, 10.0], [-15.0, 5.0]])  # px/s
        first = tracker.step(0.025, pos, None)
        for _ in range(30):
            pos = pos + vel * 0.025
            ids = tracker.step(0.025, pos, None)
            np.testing.assert_array_equal(ids, first)

    def test_recent_track_wins_over_stale_duplicate(self):
        tracker = SegmentTracker()
        a = tracker.step(0.025, np.array([[50.0, 50.0]]), None)[0]
        # a duplicate appears close by for one frame, then vanishes
        tracker.step(0.025, np.array([[50.0, 50.0], [58.0, 50.0]]), None)
        ids = tracker.step(0.025, np.array([[52.0, 50.0]]), None)
        assert ids[0] == a
