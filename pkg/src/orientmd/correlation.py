"""Cluster-conditional correlation maps.

Two flavors: DCCM, the classic normalized covariance of per-residue CA
displacements, and DCOM, the signed angle (degrees) between time-averaged
peptide-plane normal products, read out against a reference axis.  Both are
computed over an explicit frame subset so they can be conditioned on one
cluster at a time; wrapped differences compare the maps of two clusters.

DCOM sign depends on the reference axis, so the axis travels with the map
and differencing maps built on different axes is refused.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "CorrelationKind",
    "CorrelationMap",
    "DEFAULT_AXIS",
    "dccm",
    "dcom",
    "dcom_diff",
    "write_map",
    "read_map",
]

DEFAULT_AXIS = (1.0, 0.0, 0.0)
UNDEFINED_TOL = 1e-12


class CorrelationKind(str, Enum):
    DCCM = "dccm"
    DCOM = "dcom"


@dataclass(frozen=True)
class CorrelationMap:
    """Square residue-by-residue map with its kind and provenance tags.

    DCCM values live in [-1, 1] with a unit diagonal; DCOM values are
    degrees in (-180, 180] and carry the reference axis they were read
    against.  NaN marks entries the estimator declared undefined.
    """

    values: np.ndarray
    kind: CorrelationKind
    cluster_id: int | None = None
    e_axis: tuple | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError(f"correlation map must be square, got {vals.shape}")
        kind = CorrelationKind(self.kind)
        finite = np.isfinite(vals)
        if not np.array_equal(finite, finite.T):
            raise ValueError("undefined entries must appear symmetrically")
        if kind is CorrelationKind.DCCM:
            if self.e_axis is not None:
                raise ValueError("DCCM does not take a reference axis")
            if finite.any() and np.abs(vals[finite]).max() > 1.0 + 1e-9:
                raise ValueError("DCCM values must lie in [-1, 1]")
            both = finite & finite.T
            if np.abs(np.where(both, vals - vals.T, 0.0)).max() > 1e-9:
                raise ValueError("DCCM must be symmetric")
            diag = np.diagonal(vals)
            ok = ~np.isfinite(diag) | (np.abs(diag - 1.0) <= 1e-12)
            if not ok.all():
                raise ValueError("DCCM diagonal must be 1")
        else:
            axis = _check_axis(self.e_axis)
            object.__setattr__(self, "e_axis", axis)
            if finite.any() and np.abs(vals[finite]).max() > 180.0 + 1e-9:
                raise ValueError("DCOM values must lie in (-180, 180] degrees")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kind", kind)

    @property
    def n(self):
        return self.values.shape[0]


def _check_axis(e_axis):
    if e_axis is None:
        raise ValueError("DCOM maps require a reference axis")
    e = np.asarray(e_axis, dtype=np.float64)
    if e.shape != (3,):
        raise ValueError(f"reference axis must be a 3-vector, got {e.shape}")
    if abs(np.linalg.norm(e) - 1.0) > 1e-6:
        raise ValueError("reference axis must be a unit vector")
    return tuple(float(x) for x in e)


def _frame_subset(frames, n_frames):
    if frames is None:
        return np.arange(n_frames)
    idx = np.asarray(frames)
    if idx.dtype == bool:
        if idx.shape != (n_frames,):
            raise ValueError(
                f"boolean frame mask has shape {idx.shape}, trajectory has "
                f"{n_frames} frames"
            )
        return np.where(idx)[0]
    idx = np.unique(idx.astype(np.int64))
    if idx.size and (idx[0] < 0 or idx[-1] >= n_frames):
        raise ValueError("frame index out of range")
    return idx


def dccm(traj, frames=None, cluster_id=None):
    """Normalized CA displacement covariance over a frame subset.

    Displacements are taken against the subset mean, so the map is
    cluster-conditional when ``frames`` selects one cluster.  Residues with
    zero positional variance in the subset get NaN rows (warned); the
    diagonal is exactly 1 elsewhere.
    """
    idx = _frame_subset(frames, traj.n_frames)
    if idx.size < 2:
        raise ValueError(f"DCCM needs at least 2 frames, got {idx.size}")
    sub = traj.ca()[idx]
    disp = sub - sub.mean(axis=0)
    cov = np.einsum("tic,tjc->ij", disp, disp) / idx.size
    cov = 0.5 * (cov + cov.T)
    var = np.diagonal(cov).copy()
    bad = var <= 0.0
    if bad.any():
        warnings.warn(
            f"{int(bad.sum())} residue(s) have zero variance in the subset; "
            "their DCCM entries are undefined",
            RuntimeWarning,
            stacklevel=2,
        )
    norm = np.sqrt(np.outer(var, var))
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(norm > 0.0, cov / np.where(norm > 0.0, norm, 1.0), np.nan)
    d = np.arange(vals.shape[0])
    vals[d, d] = np.where(bad, np.nan, 1.0)
    return CorrelationMap(vals, CorrelationKind.DCCM, cluster_id=cluster_id)


def dcom(lcs, frames=None, e_axis=DEFAULT_AXIS, cluster_id=None):
    """Signed orientation-correlation angles between peptide-plane normals.

    For each residue pair the cross and dot products of the plane normals
    (second LCS column) are averaged over the subset and combined as
    degrees(atan2(<(n_i x n_j) . e>, <n_i . n_j>)).  When both averages
    vanish the angle is undefined and the entry is NaN.  The map is
    antisymmetric and its sign convention depends on ``e_axis``, which is
    recorded on the result.
    """
    normals = lcs.normals() if hasattr(lcs, "normals") else np.asarray(lcs, float)
    if normals.ndim != 3 or normals.shape[2] != 3:
        raise ValueError(f"expected (T, R, 3) normals, got {normals.shape}")
    e = np.asarray(_check_axis(e_axis))
    idx = _frame_subset(frames, normals.shape[0])
    if idx.size < 1:
        raise ValueError("DCOM needs at least 1 frame")
    sub = normals[idx]
    # second-moment matrices E[a,b][i,j] = <n_i[a] * n_j[b]> carry every
    # pairwise average; cross and dot terms are linear combinations
    second = np.einsum("tia,tjb->abij", sub, sub) / idx.size
    dot = second[0, 0] + second[1, 1] + second[2, 2]
    cross = (
        e[0] * (second[1, 2] - second[2, 1])
        + e[1] * (second[2, 0] - second[0, 2])
        + e[2] * (second[0, 1] - second[1, 0])
    )
    undefined = (np.abs(dot) < UNDEFINED_TOL) & (np.abs(cross) < UNDEFINED_TOL)
    vals = np.degrees(np.arctan2(cross, dot))
    vals[undefined] = np.nan
    return CorrelationMap(
        vals, CorrelationKind.DCOM, cluster_id=cluster_id, e_axis=tuple(e)
    )


def dcom_diff(a, b):
    """Elementwise wrapped DCOM difference b - a, mapped into (-180, 180]."""
    if a.kind is not CorrelationKind.DCOM or b.kind is not CorrelationKind.DCOM:
        raise ValueError("wrapped differences are defined for DCOM maps only")
    if a.n != b.n:
        raise ValueError(f"map sizes differ: {a.n} vs {b.n}")
    if not np.allclose(a.e_axis, b.e_axis, atol=1e-12):
        raise ValueError(
            f"reference axes differ: {a.e_axis} vs {b.e_axis}; angles are "
            "not comparable"
        )
    delta = b.values - a.values
    wrapped = np.mod(delta + 180.0, 360.0) - 180.0
    wrapped[wrapped == -180.0] = 180.0
    return CorrelationMap(
        wrapped, CorrelationKind.DCOM, cluster_id=None, e_axis=a.e_axis
    )


def write_map(cmap, csv_path, meta_path=None):
    """Write the value grid as CSV and the metadata as a JSON sidecar."""
    csv_path = Path(csv_path)
    if meta_path is None:
        meta_path = csv_path.with_suffix(".json")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in cmap.values:
            writer.writerow([repr(float(v)) for v in row])
    meta = {
        "kind": cmap.kind.value,
        "n_residues": cmap.n,
        "cluster": cmap.cluster_id,
        "e_axis": list(cmap.e_axis) if cmap.e_axis is not None else None,
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_map(csv_path, meta_path=None):
    csv_path = Path(csv_path)
    if meta_path is None:
        meta_path = csv_path.with_suffix(".json")
    with open(meta_path) as fh:
        meta = json.load(fh)
    rows = []
    with open(csv_path, newline="") as fh:
        for row in csv.reader(fh):
            if row:
                rows.append([float(v) for v in row])
    vals = np.array(rows, dtype=np.float64)
    if vals.shape[0] != meta["n_residues"]:
        raise ValueError(
            f"{csv_path}: grid has {vals.shape[0]} rows, metadata says "
            f"{meta['n_residues']}"
        )
    axis = meta.get("e_axis")
    return CorrelationMap(
        vals,
        CorrelationKind(meta["kind"]),
        cluster_id=meta.get("cluster"),
        e_axis=tuple(axis) if axis is not None else None,
    )
