"""Pinhole motion-field algebra in calibrated (focal-normalized) coordinates.

Intrinsics are applied at ingestion, so every function here works with
dimensionless image coordinates.  Flow is in calibrated units per second.
All functions are pure and broadcast over leading axes: a point argument may
be a single ``(2,)`` vector or an ``(N, 2)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MotionParams:
    """Rigid motion of the camera or of a segment.

    t is the translational velocity in m/s, w the angular velocity in rad/s,
    both expressed in the camera frame with the sign convention of the
    instantaneous motion-field equations (a camera translating along +x makes
    image points flow along -x).
    """

    t: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(3)
        self.w = np.asarray(self.w, dtype=float).reshape(3)
        if not (np.isfinite(self.t).all() and np.isfinite(self.w).all()):
            raise ValueError("motion parameters must be finite")

    @staticmethod
    def zero() -> "MotionParams":
        return MotionParams(np.zeros(3), np.zeros(3))


@dataclass
class Plane:
    """Scene plane parameterized so that inverse depth is linear in the image:

        1 / Z(x, y) = (normal[0]*x + normal[1]*y + normal[2]) / dist

    normal is the (not necessarily unit) surface normal, dist the plane's
    distance to the origin along it.  Inverse depth must stay positive over
    the field of view for the parameterization to describe a visible surface.
    """

    normal: np.ndarray
    dist: float

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=float).reshape(3)
        self.dist = float(self.dist)
        if self.dist <= 0:
            raise ValueError("plane distance must be positive")

    def inv_depth(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return (p[..., 0] * self.normal[0] + p[..., 1] * self.normal[1]
                + self.normal[2]) / self.dist


def translation_flow_matrix(points) -> np.ndarray:
    """2x3 matrix mapping translation to image flow at unit inverse depth."""
    p = np.asarray(points, dtype=float)
    x, y = p[..., 0], p[..., 1]
    zero = np.zeros_like(x)
    one = np.ones_like(x)
    return np.stack([
        np.stack([-one, zero, x], axis=-1),
        np.stack([zero, -one, y], axis=-1),
    ], axis=-2)


def rotation_flow_matrix(points) -> np.ndarray:
    """2x3 matrix mapping angular velocity to image flow (depth-independent)."""
    p = np.asarray(points, dtype=float)
    x, y = p[..., 0], p[..., 1]
    one = np.ones_like(x)
    return np.stack([
        np.stack([x * y, -(one + x * x), y], axis=-1),
        np.stack([one + y * y, -x * y, -x], axis=-1),
    ], axis=-2)


def planar_flow_matrix(points) -> np.ndarray:
    """2x8 matrix mapping the combined motion/plane vector to image flow."""
    p = np.asarray(points, dtype=float)
    x, y = p[..., 0], p[..., 1]
    zero = np.zeros_like(x)
    one = np.ones_like(x)
    return np.stack([
        np.stack([x * x, x * y, x, y, one, zero, zero, zero], axis=-1),
        np.stack([x * y, y * y, zero, zero, zero, y, x, one], axis=-1),
    ], axis=-2)


def flow_at(points, motion: MotionParams, inv_depth) -> np.ndarray:
    """Instantaneous image flow at calibrated points.

    inv_depth is 1/Z in 1/m, scalar or per-point; it must be non-negative.
    """
    p = np.asarray(points, dtype=float)
    x, y = p[..., 0], p[..., 1]
    iz = np.asarray(inv_depth, dtype=float)
    tx, ty, tz = motion.t
    wx, wy, wz = motion.w
    ux = iz * (x * tz - tx) + x * y * wx - (1.0 + x * x) * wy + y * wz
    uy = iz * (y * tz - ty) + (1.0 + y * y) * wx - x * y * wy - x * wz
    return np.stack([ux, uy], axis=-1)


def normal_flow_at(points, n0, motion: MotionParams, inv_depth) -> np.ndarray:
    """Projection of the flow onto the per-point unit direction n0."""
    u = flow_at(points, motion, inv_depth)
    return np.sum(u * np.asarray(n0, dtype=float), axis=-1)


def rotational_normal_flow(points, n0, w) -> np.ndarray:
    """Component of the normal flow induced purely by rotation w."""
    p = np.asarray(points, dtype=float)
    d = np.asarray(n0, dtype=float)
    x, y = p[..., 0], p[..., 1]
    wx, wy, wz = np.asarray(w, dtype=float).reshape(3)
    rx = x * y * wx - (1.0 + x * x) * wy + y * wz
    ry = (1.0 + y * y) * wx - x * y * wy - x * wz
    return rx * d[..., 0] + ry * d[..., 1]


def derotate(points, n0, n, w) -> np.ndarray:
    """Remove the rotation-induced component from scalar normal flow.

    The result obeys n_derot = (1/Z) * (translational flow . n0) under the
    rigid-motion model, leaving a translation-and-depth-only signal.
    """
    return np.asarray(n, dtype=float) - rotational_normal_flow(points, n0, w)


def plane_motion_vector(motion: MotionParams, plane: Plane) -> np.ndarray:
    """Combined 8-parameter vector describing the flow field of a rigidly
    moving planar scene, such that for every point

        planar_flow_matrix(p) @ vector == flow_at(p, motion, plane.inv_depth(p))

    holds identically.
    """
    tx, ty, tz = motion.t
    wx, wy, wz = motion.w
    al, be, ga = plane.normal
    d = plane.dist
    return np.array([
        al * tz / d - wy,
        be * tz / d + wx,
        (ga * tz - al * tx) / d,
        wz - be * tx / d,
        -wy - ga * tx / d,
        (ga * tz - be * ty) / d,
        -wz - al * ty / d,
        wx - ga * ty / d,
    ])
