"""Kalman-filter track management for merged motion segments.

Tracks carry a constant-velocity state [cx, cy, vx, vy] in pixels and
pixels/s.  Association is greedy nearest-centroid with a Euclidean gate and
a Mahalanobis check; unmatched segments start new tracks with fresh ids
(never reused), stale tracks die after a miss budget.  The background
segment always binds to the reserved id 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHI2_GATE_2D = 9.21  # 99% gate for 2-dof innovation


@dataclass
class Track:
    id: int
    state: np.ndarray       # (4,) [cx, cy, vx, vy]
    covariance: np.ndarray  # (4, 4)
    age: int = 0
    misses: int = 0


def transition_matrix(dt: float) -> np.ndarray:
    f = np.eye(4)
    f[0, 2] = dt
    f[1, 3] = dt
    return f


def process_noise(dt: float, q: float) -> np.ndarray:
    return q * np.diag([dt * dt, dt * dt, dt, dt])


MEASUREMENT_MATRIX = np.array([[1.0, 0.0, 0.0, 0.0],
                               [0.0, 1.0, 0.0, 0.0]])


def predict(track: Track, dt: float, q: float = 1.0) -> Track:
    """Constant-velocity prediction; covariance grows by the process noise."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = transition_matrix(dt)
    state = f @ track.state
    cov = f @ track.covariance @ f.T + process_noise(dt, q)
    return Track(id=track.id, state=state, covariance=cov,
                 age=track.age, misses=track.misses)


def update(track: Track, measurement, r: float = 4.0) -> Track:
    """Position-only Kalman correction in Joseph form (keeps covariance PD)."""
    z = np.asarray(measurement, dtype=float).reshape(2)
    h = MEASUREMENT_MATRIX
    rm = r * np.eye(2)
    innovation = z - h @ track.state
    s = h @ track.covariance @ h.T + rm
    gain = track.covariance @ h.T @ np.linalg.inv(s)
    state = track.state + gain @ innovation
    ikh = np.eye(4) - gain @ h
    cov = ikh @ track.covariance @ ikh.T + gain @ rm @ gain.T
    return Track(id=track.id, state=state, covariance=cov,
                 age=track.age + 1, misses=0)


@dataclass
class TrackerConfig:
    q: float = 1.0            # process noise intensity, px^2/s^3
    r: float = 4.0            # measurement variance, px^2
    gate_px: float = 30.0     # association gate radius
    t_miss: int = 3           # allowed consecutive misses before death
    init_var: float = 100.0   # initial position variance of a new track
    init_vel_var: float = 400.0


class SegmentTracker:
    """Assigns persistent ids to segment centroids across steps."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.tracks: list[Track] = []
        self.background: Track | None = None
        self._next_id = 1

    def _new_track(self, centroid, track_id: int) -> Track:
        cfg = self.config
        state = np.array([centroid[0], centroid[1], 0.0, 0.0])
        cov = np.diag([cfg.init_var, cfg.init_var, cfg.init_vel_var, cfg.init_vel_var])
        return Track(id=track_id, state=state, covariance=cov)

    def step(self, dt: float, centroids, background_index: int | None):
        """Advance one frame and return the per-segment track ids.

        centroids is an (M, 2) array of segment centroids in pixels;
        background_index selects which of them is the background segment
        (bound to id 0 unconditionally).  All other segments are associated
        greedily to surviving foreground tracks.
        """
        cfg = self.config
        cents = np.asarray(centroids, dtype=float).reshape(-1, 2)
        m = cents.shape[0]
        ids = np.full(m, -1, dtype=int)

        if background_index is not None:
            if self.background is None:
                self.background = self._new_track(cents[background_index], 0)
            else:
                self.background = predict(self.background, dt, cfg.q)
                self.background = update(self.background, cents[background_index], cfg.r)
            ids[background_index] = 0

        predicted = [predict(t, dt, cfg.q) for t in self.tracks]
        fg = [i for i in range(m) if i != background_index]

        # greedy nearest-centroid assignment, gated; tracks updated most
        # recently get first pick so stale duplicates cannot steal a match
        pairs = []
        for ti, tr in enumerate(predicted):
            pos = tr.state[:2]
            s = MEASUREMENT_MATRIX @ tr.covariance @ MEASUREMENT_MATRIX.T + cfg.r * np.eye(2)
            s_inv = np.linalg.inv(s)
            for si in fg:
                d = cents[si] - pos
                dist = float(np.hypot(d[0], d[1]))
                if dist > cfg.gate_px:
                    continue
                if float(d @ s_inv @ d) > CHI2_GATE_2D:
                    continue
                pairs.append((tr.misses, dist, ti, si))
        pairs.sort(key=lambda p: (p[0], p[1], p[2], p[3]))
        used_tracks: set[int] = set()
        used_segs: set[int] = set()
        survivors: list[Track] = []
        for _misses, _dist, ti, si in pairs:
            if ti in used_tracks or si in used_segs:
                continue
            used_tracks.add(ti)
            used_segs.add(si)
            tr = update(predicted[ti], cents[si], cfg.r)
            survivors.append(tr)
            ids[si] = tr.id

        for ti, tr in enumerate(predicted):
            if ti in used_tracks:
                continue
            tr.misses += 1
            tr.age += 1
            if tr.misses <= cfg.t_miss:
                survivors.append(tr)

        for si in fg:
            if si in used_segs:
                continue
            tr = self._new_track(cents[si], self._next_id)
            self._next_id += 1
            survivors.append(tr)
            ids[si] = tr.id

        survivors.sort(key=lambda t: t.id)
        self.tracks = survivors
        return ids
