"""Global 8-parameter planar-scene fit to normal-flow measurements.

Each measurement (p, n0, n) contributes one linear constraint
n = (planar_flow_matrix(p)^T n0)^T a on the combined motion/plane vector a.
The fit solves the stacked system by least squares; residuals flag events
whose motion is inconsistent with a single rigidly moving plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSystem

# Smallest admissible eigenvalue of the 8x8 normal matrix, relative to its
# trace.  Below this the parameters are not identifiable.
PIVOT_TOL = 1e-12


@dataclass
class PlaneFitResult:
    params: np.ndarray             # (8,) combined motion/plane vector
    residuals: np.ndarray          # (N,) observed minus predicted normal flow
    condition_estimate: float      # max/min eigenvalue of the normal matrix


def constraint_rows(points, n0) -> np.ndarray:
    """(N, 8) rows g_i with n_i = g_i . a; g_i = planar_flow_matrix(p_i)^T n0_i."""
    p = np.asarray(points, dtype=float)
    d = np.asarray(n0, dtype=float)
    x, y = p[..., 0], p[..., 1]
    dx, dy = d[..., 0], d[..., 1]
    return np.stack([
        x * x * dx + x * y * dy,
        x * y * dx + y * y * dy,
        x * dx,
        y * dx,
        dx,
        y * dy,
        x * dy,
        dy,
    ], axis=-1)


def predict_normal_flow(params, points, n0) -> np.ndarray:
    """Normal flow predicted by an 8-parameter planar model at each sample."""
    return constraint_rows(points, n0) @ np.asarray(params, dtype=float)


def fit_plane(points, n0, n) -> PlaneFitResult:
    """Least-squares fit of the planar-scene model to all samples.

    Solves the 8x8 normal equations with a symmetric eigendecomposition and
    raises DegenerateSystem when the smallest eigenvalue falls below
    PIVOT_TOL times the trace (too few samples, or samples that do not span
    the parameter space).
    """
    g = constraint_rows(points, n0)
    obs = np.asarray(n, dtype=float)
    if g.ndim != 2 or g.shape[0] < 8:
        raise DegenerateSystem(f"need at least 8 samples, got {g.shape[0] if g.ndim == 2 else 1}")

    m = g.T @ g
    rhs = g.T @ obs
    evals, evecs = np.linalg.eigh(m)
    trace = float(np.trace(m))
    if trace <= 0 or evals[0] <= PIVOT_TOL * trace:
        raise DegenerateSystem(
            f"normal matrix rank-deficient (min eigenvalue {evals[0]:.3e}, trace {trace:.3e})")

    params = evecs @ ((evecs.T @ rhs) / evals)
    residuals = obs - g @ params
    return PlaneFitResult(
        params=params,
        residuals=residuals,
        condition_estimate=float(evals[-1] / evals[0]),
    )
