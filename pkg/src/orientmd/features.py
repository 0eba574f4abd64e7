"""Per-residue local coordinate systems and trajectory feature matrices.

The local coordinate system (LCS) of a residue is built from its backbone
atoms: ``u = unit(N - CA)``, ``w = unit(C - CA)``, ``n = unit(u x w)``,
``v = u x n``, assembled column-wise as ``[u n v]``.  Orientation features
are rotation-vector coordinates of each LCS relative to a reference frame,
either a fixed reference structure or the per-residue intrinsic mean.

Feature matrices persist in the MPF1 binary format: little-endian
``magic "MPF1" | u32 n_frames | u32 dim | u8 kind tag`` followed by the
row-major float64 payload.  A CSV export with labeled columns is provided
for interoperability.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import pointcloud as _pointcloud
from . import so3
from .errors import DegenerateGeometryError, FormatError
from .so3 import MeanSettings

MPF_MAGIC = b"MPF1"
_MPF_HEADER = 13  # magic + u32 frames + u32 dim + u8 kind

# angle below which N-CA and C-CA directions count as collinear
COLLINEAR_TOL = 1e-6


class FeatureKind(str, Enum):
    """Feature families; the tag is the MPF1 kind byte."""

    MATRIX = "matrix"                      # generic numeric block
    ORIENTATION = "orientation"            # LCS vs fixed reference, 3R
    ORIENTATION_MEAN = "orientation_mean"  # LCS vs intrinsic mean, 3R
    ORIENTATION_AXIS = "orientation_axis"  # unit axis of the above, 3R
    ORIENTATION_ANGLE = "orientation_angle"  # rotation angle, R
    CA = "ca"                              # demeaned CA positions, 3R
    TORSION = "torsion"                    # (sin/cos phi, sin/cos psi), 4R
    POINTCLOUD = "pointcloud"              # tangent vs fixed reference, 3R
    POINTCLOUD_MEAN = "pointcloud_mean"    # tangent vs intrinsic mean, 3R


_KIND_TAG = {
    FeatureKind.MATRIX: 0,
    FeatureKind.ORIENTATION: 1,
    FeatureKind.ORIENTATION_MEAN: 2,
    FeatureKind.ORIENTATION_AXIS: 3,
    FeatureKind.ORIENTATION_ANGLE: 4,
    FeatureKind.CA: 5,
    FeatureKind.TORSION: 6,
    FeatureKind.POINTCLOUD: 7,
    FeatureKind.POINTCLOUD_MEAN: 8,
}
_TAG_KIND = {v: k for k, v in _KIND_TAG.items()}

# columns per residue; MATRIX has no residue structure
_KIND_WIDTH = {
    FeatureKind.ORIENTATION: 3,
    FeatureKind.ORIENTATION_MEAN: 3,
    FeatureKind.ORIENTATION_AXIS: 3,
    FeatureKind.ORIENTATION_ANGLE: 1,
    FeatureKind.CA: 3,
    FeatureKind.TORSION: 4,
    FeatureKind.POINTCLOUD: 3,
    FeatureKind.POINTCLOUD_MEAN: 3,
}

_COMPONENT_LABELS = {
    FeatureKind.ORIENTATION: ("wx", "wy", "wz"),
    FeatureKind.ORIENTATION_MEAN: ("wx", "wy", "wz"),
    FeatureKind.ORIENTATION_AXIS: ("ux", "uy", "uz"),
    FeatureKind.ORIENTATION_ANGLE: ("theta",),
    FeatureKind.CA: ("x", "y", "z"),
    FeatureKind.TORSION: ("sin_phi", "cos_phi", "sin_psi", "cos_psi"),
    FeatureKind.POINTCLOUD: ("tx", "ty", "tz"),
    FeatureKind.POINTCLOUD_MEAN: ("tx", "ty", "tz"),
}


@dataclass
class LcsStack:
    """Per-residue rotation matrices ``(T, R, 3, 3)`` for a trajectory."""

    rotations: np.ndarray
    chain_ids: np.ndarray = None

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.rotations.ndim != 4 or self.rotations.shape[2:] != (3, 3):
            raise ValueError(
                f"expected (T, R, 3, 3) rotations, got {self.rotations.shape}"
            )
        if self.chain_ids is None:
            self.chain_ids = np.full(self.rotations.shape[1], "A", dtype="<U1")
        else:
            self.chain_ids = np.asarray(self.chain_ids, dtype="<U1")

    @property
    def n_frames(self):
        return self.rotations.shape[0]

    @property
    def n_residues(self):
        return self.rotations.shape[1]

    def normals(self):
        """Second LCS column per residue, shape (T, R, 3)."""
        return self.rotations[:, :, :, 1]


@dataclass
class FeatureMatrix:
    """A ``(T, d)`` float64 feature block with its residue column map.

    ``undefined_columns`` flags columns whose raw value is a placeholder
    (for example sin/cos of torsion angles that do not exist at chain
    termini) so downstream consumers can drop them.
    """

    data: np.ndarray
    kind: FeatureKind
    n_residues: int = 0
    undefined_columns: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"expected (T, d) features, got {self.data.shape}")
        self.kind = FeatureKind(self.kind)
        width = _KIND_WIDTH.get(self.kind)
        if width is not None:
            if self.n_residues == 0 and self.data.shape[1] % width == 0:
                self.n_residues = self.data.shape[1] // width
            if self.data.shape[1] != width * self.n_residues:
                raise ValueError(
                    f"{self.kind.value} features need {width} columns per residue; "
                    f"got d={self.data.shape[1]} for R={self.n_residues}"
                )
        self.undefined_columns = tuple(int(c) for c in self.undefined_columns)

    @property
    def n_frames(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    def residue_width(self):
        width = _KIND_WIDTH.get(self.kind)
        if width is None:
            raise ValueError(f"kind {self.kind.value} has no residue column map")
        return width

    def columns(self, residue):
        """Column slice owned by one residue."""
        w = self.residue_width()
        if not 0 <= residue < self.n_residues:
            raise IndexError(f"residue {residue} out of range")
        return slice(w * residue, w * (residue + 1))

    def column_labels(self):
        if self.kind is FeatureKind.MATRIX:
            return [f"c{i}" for i in range(self.dim)]
        comps = _COMPONENT_LABELS[self.kind]
        return [f"r{r}_{c}" for r in range(self.n_residues) for c in comps]


# ---------------------------------------------------------------------------
# MPF1 + CSV persistence


def write_features(fm, path):
    header = MPF_MAGIC + struct.pack(
        "<IIB", fm.data.shape[0], fm.data.shape[1], _KIND_TAG[fm.kind]
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(fm.data, dtype="<f8").tobytes())


def read_features(path):
    path = str(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MPF_HEADER:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    if raw[:4] != MPF_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}", offset=0)
    n_frames, dim, tag = struct.unpack_from("<IIB", raw, 4)
    if tag not in _TAG_KIND:
        raise FormatError(f"{path}: unknown kind tag {tag}", offset=12)
    need = n_frames * dim * 8
    avail = len(raw) - _MPF_HEADER
    if avail < need:
        raise FormatError(
            f"{path}: payload needs {need} bytes, found {avail}", offset=len(raw)
        )
    data = np.frombuffer(raw, dtype="<f8", count=n_frames * dim, offset=_MPF_HEADER)
    return FeatureMatrix(data.reshape(n_frames, dim).copy(), _TAG_KIND[tag])


def export_features_csv(fm, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame"] + fm.column_labels())
        for t in range(fm.data.shape[0]):
            writer.writerow([t] + [repr(float(v)) for v in fm.data[t]])


# ---------------------------------------------------------------------------
# local coordinate systems


def build_lcs(traj):
    """Local coordinate systems for every frame and residue of a trajectory."""
    coords = traj.coords
    ca = coords[:, :, 1, :]
    u = coords[:, :, 0, :] - ca
    w = coords[:, :, 2, :] - ca
    nu = np.linalg.norm(u, axis=-1)
    nw = np.linalg.norm(w, axis=-1)
    tiny = (nu < 1e-12) | (nw < 1e-12)
    if np.any(tiny):
        t, r = np.argwhere(tiny)[0]
        raise DegenerateGeometryError(
            "backbone atom coincides with CA", frame=int(t), residue=int(r)
        )
    u = u / nu[..., None]
    w = w / nw[..., None]
    cross = np.cross(u, w)
    sin_a = np.linalg.norm(cross, axis=-1)
    cos_a = np.sum(u * w, axis=-1)
    angle = np.arctan2(sin_a, cos_a)
    collinear = np.minimum(angle, np.pi - angle) < COLLINEAR_TOL
    if np.any(collinear):
        t, r = np.argwhere(collinear)[0]
        raise DegenerateGeometryError(
            "backbone directions N-CA and C-CA are collinear",
            frame=int(t),
            residue=int(r),
        )
    n = cross / sin_a[..., None]
    v = np.cross(u, n)
    rot = np.stack([u, n, v], axis=-1)  # columns u, n, v
    return LcsStack(rot, traj.chain_ids.copy())


# ---------------------------------------------------------------------------
# feature builders


def orientation_features(lcs, reference=None, mean_settings=MeanSettings()):
    """Rotation-vector features of each LCS against a reference frame.

    With an explicit ``reference`` (``(R, 3, 3)`` rotations) the result has
    kind ORIENTATION; with ``reference=None`` the per-residue intrinsic mean
    over frames is used instead (kind ORIENTATION_MEAN).  No demeaning or
    normalization is applied; by construction the feature norm of a residue
    is its geodesic distance from the reference frame.
    """
    rot = lcs.rotations
    t, r = rot.shape[:2]
    if reference is None:
        reference, converged, iters = so3.intrinsic_mean(
            rot, mean_settings, validate=False
        )
        if not converged:
            warnings.warn(
                f"intrinsic mean did not converge within {iters} iterations; "
                "using last iterate",
                RuntimeWarning,
                stacklevel=2,
            )
        kind = FeatureKind.ORIENTATION_MEAN
    else:
        reference = so3.check_rotation(np.asarray(reference, dtype=np.float64))
        if reference.shape != (r, 3, 3):
            raise ValueError(
                f"reference must be ({r}, 3, 3) rotations, got {reference.shape}"
            )
        kind = FeatureKind.ORIENTATION
    rel = np.einsum("rji,trjk->trik", reference, rot)
    w = so3.log_map(rel, validate=False)
    return FeatureMatrix(w.reshape(t, 3 * r), kind, n_residues=r)


def axis_angle_split(fm):
    """Split ORIENTATION_MEAN features into unit-axis and angle blocks.

    Residue blocks with zero angle get a zero axis.  Angles inherit the log
    map range ``[0, pi]``.
    """
    if fm.kind is not FeatureKind.ORIENTATION_MEAN:
        raise ValueError(
            f"axis/angle split is defined for orientation_mean features, "
            f"got {fm.kind.value}"
        )
    t, r = fm.data.shape[0], fm.n_residues
    w = fm.data.reshape(t, r, 3)
    theta = np.linalg.norm(w, axis=-1)
    safe = np.where(theta == 0.0, 1.0, theta)
    axis = np.where(theta[..., None] == 0.0, 0.0, w / safe[..., None])
    axis_fm = FeatureMatrix(
        axis.reshape(t, 3 * r), FeatureKind.ORIENTATION_AXIS, n_residues=r
    )
    angle_fm = FeatureMatrix(theta, FeatureKind.ORIENTATION_ANGLE, n_residues=r)
    return axis_fm, angle_fm


def ca_features(traj):
    """Concatenated CA positions, demeaned per column over frames."""
    ca = traj.ca()
    t, r = ca.shape[:2]
    data = ca.reshape(t, 3 * r)
    data = data - data.mean(axis=0)
    return FeatureMatrix(data, FeatureKind.CA, n_residues=r)


def dihedral_angle(p1, p2, p3, p4):
    """Signed dihedral around the p2-p3 bond, broadcasting over (..., 3)."""
    b0 = np.asarray(p1, float) - p2
    b1 = np.asarray(p3, float) - p2
    b2 = np.asarray(p4, float) - p3
    b1 = b1 / np.linalg.norm(b1, axis=-1, keepdims=True)
    v = b0 - np.sum(b0 * b1, axis=-1, keepdims=True) * b1
    w = b2 - np.sum(b2 * b1, axis=-1, keepdims=True) * b1
    x = np.sum(v * w, axis=-1)
    y = np.sum(np.cross(b1, v) * w, axis=-1)
    return np.arctan2(y, x)


def torsion_features(traj):
    """Backbone torsion embedding ``(sin phi, cos phi, sin psi, cos psi)``.

    Angles that do not exist (phi of the first residue of a chain, psi of
    the last) are set to zero before embedding, giving the constant pair
    ``(0, 1)``; the affected columns are flagged in ``undefined_columns``.
    Columns are demeaned after the embedding.
    """
    coords = traj.coords
    t, r = coords.shape[:2]
    if r < 2:
        raise ValueError("torsion features need at least 2 residues")
    chain = traj.chain_ids
    n_at, ca_at, c_at = coords[:, :, 0], coords[:, :, 1], coords[:, :, 2]

    phi = np.zeros((t, r))
    psi = np.zeros((t, r))
    has_prev = np.zeros(r, dtype=bool)
    has_next = np.zeros(r, dtype=bool)
    has_prev[1:] = chain[1:] == chain[:-1]
    has_next[:-1] = chain[1:] == chain[:-1]

    if np.any(has_prev):
        idx = np.where(has_prev)[0]
        phi[:, idx] = dihedral_angle(
            c_at[:, idx - 1], n_at[:, idx], ca_at[:, idx], c_at[:, idx]
        )
    if np.any(has_next):
        idx = np.where(has_next)[0]
        psi[:, idx] = dihedral_angle(
            n_at[:, idx], ca_at[:, idx], c_at[:, idx], n_at[:, idx + 1]
        )

    data = np.empty((t, 4 * r))
    data[:, 0::4] = np.sin(phi)
    data[:, 1::4] = np.cos(phi)
    data[:, 2::4] = np.sin(psi)
    data[:, 3::4] = np.cos(psi)
    undefined = []
    for i in range(r):
        if not has_prev[i]:
            undefined += [4 * i, 4 * i + 1]
        if not has_next[i]:
            undefined += [4 * i + 2, 4 * i + 3]
    data = data - data.mean(axis=0)
    return FeatureMatrix(
        data, FeatureKind.TORSION, n_residues=r, undefined_columns=tuple(undefined)
    )


def pointcloud_features(
    clouds,
    reference=None,
    settings=_pointcloud.PointcloudSettings(),
    metric_builder=_pointcloud.inverse_square_laplacian,
):
    """Tangent-space features of CA point clouds.

    ``clouds`` is ``(T, R, 3)`` (or a trajectory, whose CA atoms are used).
    With an explicit ``reference`` cloud the kind is POINTCLOUD; with
    ``reference=None`` the intrinsic mean configuration is computed first
    (kind POINTCLOUD_MEAN).
    """
    if hasattr(clouds, "ca"):
        clouds = clouds.ca()
    clouds = np.asarray(clouds, dtype=np.float64)
    if clouds.ndim != 3 or clouds.shape[-1] != 3:
        raise ValueError(f"expected (T, R, 3) point clouds, got {clouds.shape}")
    t, r = clouds.shape[:2]
    if reference is None:
        reference, converged, iters = _pointcloud.pointcloud_mean(
            clouds, settings, metric_builder
        )
        if not converged:
            warnings.warn(
                f"point-cloud mean did not converge within {iters} iterations; "
                "using last iterate",
                RuntimeWarning,
                stacklevel=2,
            )
        kind = FeatureKind.POINTCLOUD_MEAN
    else:
        reference = np.asarray(reference, dtype=np.float64)
        if reference.shape != (r, 3):
            raise ValueError(f"reference must be ({r}, 3), got {reference.shape}")
        kind = FeatureKind.POINTCLOUD
    op = _pointcloud.tangent_operator(reference, settings, metric_builder)
    tang = _pointcloud.pointcloud_log(clouds, op)
    return FeatureMatrix(tang.reshape(t, 3 * r), kind, n_residues=r)
