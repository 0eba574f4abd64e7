"""Shared test utilities and independent numerical oracles.

Everything here is deliberately written through a different route than the
package code it checks: rotations are built from quaternions rather than the
Rodrigues map, logs are recovered through quaternion components, and so on.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# quaternion-based rotation oracle


def rot_from_axis_angle(axis, angle):
    """Rotation matrix from axis/angle via the quaternion product formula."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    w = np.cos(angle / 2.0)
    x, y, z = np.sin(angle / 2.0) * axis
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_x(angle):
    return rot_from_axis_angle([1.0, 0.0, 0.0], angle)


def rot_y(angle):
    return rot_from_axis_angle([0.0, 1.0, 0.0], angle)


def rot_z(angle):
    return rot_from_axis_angle([0.0, 0.0, 1.0], angle)


def quat_from_matrix(r):
    """Unit quaternion (w, x, y, z) with w >= 0, by Shepperd's branching."""
    r = np.asarray(r, dtype=np.float64)
    t = r[0, 0] + r[1, 1] + r[2, 2]
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s,
             (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s,
             (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s,
             (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
             (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quat_log(r):
    """Rotation vector of a single rotation matrix via its quaternion."""
    q = quat_from_matrix(r)
    w, v = q[0], q[1:]
    sn = np.linalg.norm(v)
    if sn < 1e-300:
        return np.zeros(3)
    theta = 2.0 * np.arctan2(sn, w)
    return theta * v / sn


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    angle = rng.uniform(0.0, max_angle)
    return rot_from_axis_angle(axis, angle)


def random_rotations(rng, n, max_angle=np.pi):
    return np.stack([random_rotation(rng, max_angle) for _ in range(n)])


# ---------------------------------------------------------------------------
# synthetic backbone geometry

CA_STEP = 3.8  # rough CA-CA distance along a chain, angstrom


def make_backbone_frame(rng, n_residues, spread=0.2):
    """One plausible backbone frame (R, 3, 3) with atoms N, CA, C."""
    ca = np.cumsum(rng.normal(scale=1.0, size=(n_residues, 3)) + [CA_STEP, 0, 0], axis=0)
    frame = np.empty((n_residues, 3, 3))
    for r in range(n_residues):
        # two clearly non-collinear bond directions around each CA
        d1 = rng.normal(size=3)
        d1 /= np.linalg.norm(d1)
        d2 = rng.normal(size=3)
        d2 -= d2 @ d1 * d1 * 0.5  # keep a healthy angle between them
        d2 /= np.linalg.norm(d2)
        frame[r, 0] = ca[r] + 1.46 * d1
        frame[r, 1] = ca[r]
        frame[r, 2] = ca[r] + 1.52 * d2
    return frame + rng.normal(scale=spread, size=frame.shape)


def make_backbone_trajectory(rng, n_frames, n_residues, spread=0.1):
    """(T, R, 3, 3) trajectory: one base frame plus per-frame noise."""
    base = make_backbone_frame(rng, n_residues, spread=0.0)
    traj = np.repeat(base[None], n_frames, axis=0)
    traj += rng.normal(scale=spread, size=traj.shape)
    return traj


def apply_rigid(coords, rotation, translation):
    """Apply x -> R x + t to an (..., 3) coordinate array."""
    return coords @ np.asarray(rotation).T + np.asarray(translation)
