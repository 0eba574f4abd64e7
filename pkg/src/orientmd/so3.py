"""Numerics on the rotation group SO(3).

Rotations are plain ``(..., 3, 3)`` float64 arrays with orthonormal columns
and determinant +1; every routine broadcasts over leading axes, so a whole
trajectory of per-residue frames ``(T, R, 3, 3)`` goes through in one call.
Rotation vectors (tangent coordinates) are ``(..., 3)`` arrays.

Conventions
-----------
* ``hat((wx, wy, wz))`` is ``[[0, -wz, wy], [wz, 0, -wx], [-wy, wx, 0]]``
  and ``vee`` is its inverse.
* The rotation angle is recovered from both the trace and the antisymmetric
  part, ``theta = atan2(sin_theta, cos_theta)``, which stays well conditioned
  where a plain arccos of the trace does not.
* ``log_map`` returns ``theta * n`` with ``theta`` in ``[0, pi]``.  Near
  ``pi`` the axis magnitudes come from the diagonal of
  ``S = R + R^T + (1 - tr R) I`` and the axis sign is chosen consistent with
  ``vee(R - R^T)``; at exactly ``pi`` (where that vector vanishes) the sign
  is fixed by making the largest-magnitude component positive, first index
  winning ties.
* Inputs whose orthonormality drift exceeds ``ORTHO_SOFT_TOL`` but stays
  below ``ORTHO_HARD_TOL`` are re-orthonormalized by polar projection and a
  warning is emitted; anything worse is rejected.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# Orthonormality drift bounds: below SOFT nothing happens, between SOFT and
# HARD the input is polar-projected back onto the group, above HARD it is an
# error.
ORTHO_SOFT_TOL = 1e-8
ORTHO_HARD_TOL = 1e-4

# Half-width of the branch windows around theta = 0 and theta = pi.
DEFAULT_EPS = 1e-7

_EYE3 = np.eye(3)


@dataclass(frozen=True)
class MeanSettings:
    """Iteration budget for the Riemannian (intrinsic) mean."""

    max_iters: int = 256
    learning_rate: float = 0.1
    tolerance: float = 1e-3

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


def hat(w):
    """Map rotation vectors ``(..., 3)`` to antisymmetric matrices ``(..., 3, 3)``."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != 3:
        raise ValueError(f"expected (..., 3) rotation vectors, got {w.shape}")
    out = np.zeros(w.shape[:-1] + (3, 3), dtype=np.float64)
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(m, check=True):
    """Inverse of :func:`hat`; `m` must be antisymmetric when ``check`` is on."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) matrices, got {m.shape}")
    if check:
        scale = 1.0 + np.abs(m).max(initial=0.0)
        drift = np.abs(m + np.swapaxes(m, -1, -2)).max(initial=0.0)
        if drift > 1e-8 * scale:
            raise ValueError("matrix is not antisymmetric")
    return np.stack(
        [m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1
    )


def _trace(r):
    return r[..., 0, 0] + r[..., 1, 1] + r[..., 2, 2]


def check_rotation(r, hard=ORTHO_HARD_TOL, soft=ORTHO_SOFT_TOL):
    """Validate (and if mildly drifted, repair) an array of rotations.

    Returns the input unchanged when every matrix is orthonormal with
    determinant +1 within ``soft``; matrices drifting between ``soft`` and
    ``hard`` are replaced by their polar projection (warning emitted); any
    matrix beyond ``hard`` raises ``ValueError``.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) rotations, got {r.shape}")
    gram = np.einsum("...ji,...jk->...ik", r, r)
    ortho_err = np.abs(gram - _EYE3).max(axis=(-2, -1))
    det_err = np.abs(np.linalg.det(r) - 1.0)
    err = np.maximum(ortho_err, det_err)
    worst = float(err.max(initial=0.0))
    if worst > hard:
        raise ValueError(
            f"input is not a rotation matrix: drift {worst:.3e} exceeds {hard:.1e}"
        )
    if worst > soft:
        warnings.warn(
            f"rotation drift {worst:.3e} above {soft:.1e}; re-orthonormalizing "
            "by polar projection",
            RuntimeWarning,
            stacklevel=3,
        )
        r = r.copy()
        bad = err > soft
        u, _, vt = np.linalg.svd(r[bad])
        # drift <= hard guarantees det stays near +1, so u @ vt is proper
        r[bad] = u @ vt
    return r


def exp_map(w):
    """Rodrigues map from rotation vectors ``(..., 3)`` to rotations."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != 3:
        raise ValueError(f"expected (..., 3) rotation vectors, got {w.shape}")
    theta = np.linalg.norm(w, axis=-1)
    t2 = theta * theta
    small = theta < 1e-4
    safe = np.where(theta == 0.0, 1.0, theta)
    # series keep full f64 accuracy through the small-angle window
    a = np.where(small, 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0), np.sin(theta) / safe)
    b = np.where(
        small, 0.5 - t2 / 24.0 * (1.0 - t2 / 30.0), (1.0 - np.cos(theta)) / (safe * safe)
    )
    k = hat(w)
    k2 = k @ k
    return _EYE3 + a[..., None, None] * k + b[..., None, None] * k2


def _log_near_pi(r, tr, theta, v):
    """Branch of the log for theta > pi - eps; `r` is (k, 3, 3)."""
    denom = 3.0 - tr  # = 2 (1 - cos theta), bounded away from 0 here
    s_diag = 2.0 * np.einsum("...ii->...i", r) + (1.0 - tr)[:, None]
    n_abs = np.sqrt(np.clip(s_diag / denom[:, None], 0.0, None))
    # Relative signs come from the column of S = R + R^T + (1 - tr) I that
    # belongs to the largest diagonal entry: S_ij = 2 (1 - cos) n_i n_j.
    s_full = r + np.swapaxes(r, -1, -2) + (1.0 - tr)[:, None, None] * _EYE3
    pivot = np.argmax(s_diag, axis=-1)
    col = np.take_along_axis(s_full, pivot[:, None, None], axis=-1)[..., 0]
    n = n_abs * np.where(col >= 0.0, 1.0, -1.0)
    # Global sign: agree with vee(R - R^T) = 2 sin(theta) n while it is
    # nonzero; at exactly pi it vanishes and the pivot-positive choice stands.
    dot = np.sum(n * v, axis=-1)
    n = np.where(dot[:, None] < 0.0, -n, n)
    return theta[:, None] * n


def log_map(r, eps=DEFAULT_EPS, validate=True):
    """Principal logarithm of rotations, returned as rotation vectors.

    Piecewise evaluation: identity-like inputs (theta < eps) map to zero,
    the generic branch uses ``theta / (2 sin theta) * vee(R - R^T)``, and a
    dedicated branch handles theta within eps of pi where that formula blows
    up.  Output norm is the rotation angle, always in ``[0, pi]``.
    """
    r = np.asarray(r, dtype=np.float64)
    if validate:
        r = check_rotation(r)
    elif r.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) rotations, got {r.shape}")
    scalar_input = r.ndim == 2
    if scalar_input:
        r = r[None]

    tr = _trace(r)
    cos_t = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    v = np.stack(
        [
            r[..., 2, 1] - r[..., 1, 2],
            r[..., 0, 2] - r[..., 2, 0],
            r[..., 1, 0] - r[..., 0, 1],
        ],
        axis=-1,
    )
    # ||vee(R - R^T)|| = 2 sin(theta); unlike the trace product
    # sqrt((3 - tr)(1 + tr)) this stays fully accurate as tr -> -1
    sin_t = 0.5 * np.linalg.norm(v, axis=-1)
    theta = np.arctan2(sin_t, cos_t)

    out = np.zeros(r.shape[:-2] + (3,), dtype=np.float64)
    mid = (theta >= eps) & (theta <= np.pi - eps)
    if np.any(mid):
        scale = theta[mid] / (2.0 * sin_t[mid])
        out[mid] = scale[..., None] * v[mid]
    high = theta > np.pi - eps
    if np.any(high):
        out[high] = _log_near_pi(r[high], tr[high], theta[high], v[high])

    return out[0] if scalar_input else out


def geodesic_distance(a, b, validate=True):
    """Geodesic distance ``||log(a^T b)||`` in ``[0, pi]``, broadcasting."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    rel = np.einsum("...ji,...jk->...ik", a, b)
    return np.linalg.norm(log_map(rel, validate=validate), axis=-1)


def intrinsic_mean(rotations, settings=MeanSettings(), validate=True):
    """Riemannian mean of rotations by fixed-step gradient descent.

    Parameters
    ----------
    rotations:
        ``(T, ..., 3, 3)`` stack; the mean is taken over the leading axis,
        independently for every trailing batch entry.
    settings:
        Iteration budget.  The descent starts from the first sample and
        applies ``mean <- mean @ exp(learning_rate * g)`` with
        ``g = (1/T) sum_t log(mean^T R_t)`` until ``||g|| < tolerance``
        everywhere in the batch.

    Returns
    -------
    (mean, converged, iters):
        ``mean`` has shape ``(..., 3, 3)``; ``converged`` is a bool (all
        batch entries below tolerance); ``iters`` counts update steps taken.
        Non-convergence is reported through the flag, never as an error.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    if rotations.ndim < 3 or rotations.shape[-2:] != (3, 3):
        raise ValueError(f"expected (T, ..., 3, 3) rotations, got {rotations.shape}")
    if rotations.shape[0] == 0:
        raise ValueError("cannot average an empty set of rotations")
    if validate:
        rotations = check_rotation(rotations)

    mean = rotations[0].copy()
    iters = 0
    while True:
        rel = np.einsum("...ji,t...jk->t...ik", mean, rotations)
        g = log_map(rel, validate=False).mean(axis=0)
        if np.all(np.linalg.norm(g, axis=-1) < settings.tolerance):
            return mean, True, iters
        if iters >= settings.max_iters:
            return mean, False, iters
        mean = mean @ exp_map(settings.learning_rate * g)
        iters += 1
