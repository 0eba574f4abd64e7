"""Tangent-space geometry for residue point clouds.

A configuration of R residues is a point in R^(3R).  Pairwise structure of a
reference configuration enters through a metric tensor on that space; the log
map projects displacements from the reference through the delta-regularized
pseudo-inverse of that metric, so directions whose metric eigenvalue falls
below ``delta * lambda_max`` are discarded.

The metric assembly is deliberately isolated behind a single builder
function so it can be swapped out: the default builds the graph Laplacian of
inverse squared pairwise distances, Kronecker-extended over the three
Cartesian components.  It is symmetric positive semidefinite, costs O(R^2)
to assemble, and its null space holds the rigid translations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError
from .so3 import MeanSettings


@dataclass(frozen=True)
class PointcloudSettings:
    """Spectral cutoff and mean-iteration budget for point-cloud features."""

    delta: float = 0.1
    mean_settings: MeanSettings = field(
        default_factory=lambda: MeanSettings(
            max_iters=256, learning_rate=1.0, tolerance=1.0
        )
    )

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie strictly between 0 and 1")


def inverse_square_laplacian(points):
    """Default metric: Laplacian of 1/d^2 weights, Kronecker with I3."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"expected (R, 3) points, got {points.shape}")
    diff = points[:, None, :] - points[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    off = ~np.eye(len(points), dtype=bool)
    if np.any(d2[off] < 1e-20):
        raise DegenerateGeometryError("coincident residues in reference cloud")
    w = np.zeros_like(d2)
    w[off] = 1.0 / d2[off]
    lap = np.diag(w.sum(axis=1)) - w
    return np.kron(lap, np.eye(3))


def metric_tensor(points, builder=inverse_square_laplacian):
    """Assemble the (3R, 3R) metric tensor of a reference configuration."""
    m = np.asarray(builder(points), dtype=np.float64)
    n = 3 * len(points)
    if m.shape != (n, n):
        raise ValueError(f"metric builder returned {m.shape}, expected {(n, n)}")
    return m


def metric_pseudo_inverse(metric, delta):
    """Eigendecomposition pseudo-inverse dropping ``lambda < delta * lambda_max``."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie strictly between 0 and 1")
    vals, vecs = np.linalg.eigh(metric)
    lam_max = vals[-1]
    if lam_max <= 0.0:
        raise DegenerateGeometryError("metric tensor has no positive eigenvalues")
    keep = vals >= delta * lam_max
    kept_vecs = vecs[:, keep]
    return (kept_vecs / vals[keep]) @ kept_vecs.T


@dataclass
class TangentOperator:
    """Precomputed per-reference data for the point-cloud log map."""

    reference: np.ndarray      # (R, 3)
    metric: np.ndarray         # (3R, 3R)
    metric_pinv: np.ndarray    # (3R, 3R)
    projector: np.ndarray      # pinv @ metric, projection onto kept modes


def tangent_operator(reference, settings=PointcloudSettings(),
                     builder=inverse_square_laplacian):
    reference = np.asarray(reference, dtype=np.float64)
    metric = metric_tensor(reference, builder)
    pinv = metric_pseudo_inverse(metric, settings.delta)
    return TangentOperator(reference, metric, pinv, pinv @ metric)


def pointcloud_log(clouds, op):
    """Tangent coordinates of clouds at the operator's reference.

    ``clouds`` is ``(..., R, 3)``; the result has the same shape.  The
    displacement from the reference is filtered through the projection onto
    the metric eigenmodes kept by the delta cutoff, which is linear per
    frame and O(R^2) in the residue count.
    """
    clouds = np.asarray(clouds, dtype=np.float64)
    r = op.reference.shape[0]
    if clouds.shape[-2:] != (r, 3):
        raise ValueError(
            f"clouds of shape {clouds.shape} do not match reference with {r} residues"
        )
    lead = clouds.shape[:-2]
    disp = (clouds - op.reference).reshape(-1, 3 * r)
    out = disp @ op.projector.T
    return out.reshape(*lead, r, 3)


def pointcloud_exp(tangent, op):
    """Straight-line retraction: reference plus the (projected) tangent."""
    tangent = np.asarray(tangent, dtype=np.float64)
    r = op.reference.shape[0]
    if tangent.shape[-2:] != (r, 3):
        raise ValueError(
            f"tangents of shape {tangent.shape} do not match reference "
            f"with {r} residues"
        )
    lead = tangent.shape[:-2]
    flat = tangent.reshape(-1, 3 * r) @ op.projector.T
    return op.reference + flat.reshape(*lead, r, 3)


def pointcloud_mean(clouds, settings=PointcloudSettings(),
                    builder=inverse_square_laplacian):
    """Intrinsic mean configuration by the same fixed-step descent as SO(3).

    Starts from the first frame; each step rebuilds the tangent operator at
    the current base (the metric moves with the base point), averages the
    logs of all frames and retracts.  Returns (mean, converged, iters).
    """
    clouds = np.asarray(clouds, dtype=np.float64)
    if clouds.ndim != 3 or clouds.shape[-1] != 3:
        raise ValueError(f"expected (T, R, 3) clouds, got {clouds.shape}")
    if clouds.shape[0] == 0:
        raise ValueError("cannot average an empty set of clouds")
    ms = settings.mean_settings
    base = clouds[0].copy()
    iters = 0
    while True:
        op = tangent_operator(base, settings, builder)
        g = pointcloud_log(clouds, op).mean(axis=0)
        if np.linalg.norm(g) < ms.tolerance:
            return base, True, iters
        if iters >= ms.max_iters:
            return base, False, iters
        base = base + ms.learning_rate * g
        iters += 1
