"""Minimal SE(3) helpers: hat maps, exponential, logarithm.

Twists are 6-vectors [v, w] (translational part first).  Small rotation
angles use series expansions to keep the round trip exp(log(T)) = T tight.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

_EPS = 1e-10


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(3)
    angle = np.linalg.norm(w)
    k = skew(w)
    if angle < _EPS:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(rot) -> np.ndarray:
    r = np.asarray(rot, dtype=float)
    axis_raw = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    # sin from the antisymmetric part stays well conditioned where the
    # trace-based cosine saturates (angles near 0 and pi)
    sin_angle = 0.5 * float(np.linalg.norm(axis_raw))
    cos_angle = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    angle = float(np.arctan2(sin_angle, cos_angle))
    if angle < 1e-7:
        return 0.5 * axis_raw
    if np.pi - angle < 1e-5:
        # near pi the axis direction comes from the symmetrized (R + I)/2,
        # which approaches outer(axis, axis)
        m = 0.25 * (r + r.T) + 0.5 * np.eye(3)
        diag = np.clip(np.diag(m), 0.0, None)
        i = int(np.argmax(diag))
        axis = m[:, i] / np.sqrt(diag[i])
        axis = axis / np.linalg.norm(axis)
        if axis_raw @ axis < 0:
            axis = -axis
        return angle * axis
    return axis_raw * (0.5 * angle / sin_angle)


def _left_jacobian(w) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(3)
    angle = np.linalg.norm(w)
    k = skew(w)
    if angle < _EPS:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    a = (1.0 - np.cos(angle)) / (angle * angle)
    b = (angle - np.sin(angle)) / (angle ** 3)
    return np.eye(3) + a * k + b * (k @ k)


def _left_jacobian_inv(w) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(3)
    angle = np.linalg.norm(w)
    k = skew(w)
    if angle < _EPS:
        return np.eye(3) - 0.5 * k + (k @ k) / 12.0
    half = 0.5 * angle
    cot = half / np.tan(half)
    coef = (1.0 - cot) / (angle * angle)
    return np.eye(3) - 0.5 * k + coef * (k @ k)


def se3_exp(twist) -> np.ndarray:
    """4x4 rigid transform from a twist [v, w]."""
    xi = np.asarray(twist, dtype=float).reshape(6)
    v, w = xi[:3], xi[3:]
    t = np.eye(4)
    t[:3, :3] = so3_exp(w)
    t[:3, 3] = _left_jacobian(w) @ v
    return t


def se3_log(transform) -> np.ndarray:
    """Twist [v, w] of a rigid transform; inverse of se3_exp."""
    t = np.asarray(transform, dtype=float)
    check_rigid(t)
    w = so3_log(t[:3, :3])
    v = _left_jacobian_inv(w) @ t[:3, 3]
    return np.concatenate([v, w])


def check_rigid(transform, tol: float = 1e-6) -> None:
    """Raise ValidationError unless the 4x4 matrix is a rigid transform."""
    t = np.asarray(transform, dtype=float)
    if t.shape != (4, 4):
        raise ValidationError(f"expected 4x4 transform, got {t.shape}")
    r = t[:3, :3]
    if np.abs(r.T @ r - np.eye(3)).max() > tol:
        raise ValidationError("rotation block is not orthogonal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValidationError("rotation block has determinant != 1")
    if np.abs(t[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > tol:
        raise ValidationError("bottom row must be [0, 0, 0, 1]")
