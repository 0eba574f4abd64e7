"""Protein-protein association analysis for two-chain systems.

Covers the bound/unbound pipeline: interface detection on the reference
structure, per-frame interface RMSD and center-of-geometry distance, a
KDE-based threshold separating the bound population, a two-step PCA over
per-monomer features with residue-level contributions, and a kNN mutual
information estimate between projections and binding labels.

The MI estimator is the continuous-feature / discrete-label kNN variant:
per-class neighbor radii are turned into whole-sample neighbor counts and
combined through digamma terms.  It is written against scipy's KD-tree and
clamped at zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.signal
import scipy.spatial
import scipy.stats
from scipy.special import digamma

from .errors import DegenerateModelError, TopologyError
from .kinetics import pca_fit
from .trajio import kabsch

__all__ = [
    "DEFAULT_INTERFACE_CUTOFF",
    "MI_NEIGHBORS",
    "MetricKind",
    "InterfaceDefinition",
    "AssociationSeries",
    "TwoStepPca",
    "detect_interface",
    "irmsd",
    "irmsd_series",
    "cog_distance",
    "cog_series",
    "kde_threshold",
    "two_step_pca",
    "knn_mi",
    "association_report",
    "write_association_report",
    "write_association_csv",
]

DEFAULT_INTERFACE_CUTOFF = 10.0
KDE_GRID_SIZE = 512
KDE_MIN_SAMPLES = 100
PEAK_MIN_REL_HEIGHT = 1e-3
PEAK_MIN_REL_PROMINENCE = 0.05
MI_NEIGHBORS = 3
MI_MIN_SAMPLES = 50


class MetricKind(str, Enum):
    IRMSD = "irmsd"
    COG_DISTANCE = "cog_distance"


@dataclass(frozen=True)
class InterfaceDefinition:
    """Global residue indices of the interface on each chain."""

    residues_a: np.ndarray
    residues_b: np.ndarray
    cutoff: float

    def __post_init__(self):
        for name in ("residues_a", "residues_b"):
            idx = np.unique(np.asarray(getattr(self, name), dtype=np.int64))
            object.__setattr__(self, name, idx)
        if self.cutoff <= 0.0:
            raise ValueError("interface cutoff must be positive")

    @property
    def is_empty(self):
        return self.residues_a.size == 0 and self.residues_b.size == 0

    def joint(self):
        return np.concatenate([self.residues_a, self.residues_b])


@dataclass(frozen=True)
class AssociationSeries:
    """Per-frame metric with binding labels derived from a threshold.

    Labels follow the strict rule ``metric < threshold``: a frame sitting
    exactly at the threshold is unbound, and an undefined (NaN) threshold
    leaves every frame unbound.
    """

    metric: np.ndarray
    labels: np.ndarray
    threshold: float

    def __post_init__(self):
        metric = np.asarray(self.metric, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if metric.ndim != 1 or metric.shape != labels.shape:
            raise ValueError("metric and labels must be matching 1-D arrays")
        want = (metric < self.threshold).astype(np.int64)
        if not np.array_equal(labels, want):
            raise ValueError("labels must equal (metric < threshold) exactly")
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "threshold", float(self.threshold))

    @classmethod
    def from_metric(cls, metric, threshold):
        metric = np.asarray(metric, dtype=np.float64)
        labels = (metric < threshold).astype(np.int64)
        return cls(metric, labels, float(threshold))

    @property
    def n_bound(self):
        return int(self.labels.sum())

    @property
    def n_unbound(self):
        return int(self.labels.shape[0] - self.labels.sum())


@dataclass(frozen=True)
class TwoStepPca:
    """Two whitened PCA stages with residue-level loading contributions.

    ``contributions`` is (2, R_a + R_b): per stage-2 component, the fraction
    of the propagated loading weight carried by each residue (monomer A
    residues first).  Rows are nonnegative and sum to 1.
    """

    stage1_a: object
    stage1_b: object
    stage2: object
    projections: np.ndarray
    contributions: np.ndarray
    n_residues_a: int

    @property
    def contributions_a(self):
        return self.contributions[:, : self.n_residues_a]

    @property
    def contributions_b(self):
        return self.contributions[:, self.n_residues_a :]


def _two_chain_split(chain_ids, chains=None):
    chain_ids = np.asarray(chain_ids)
    present = []
    for c in chain_ids:
        if c not in present:
            present.append(c)
    if chains is None:
        if len(present) != 2:
            raise TopologyError(
                f"need exactly two chains, structure has {len(present)}: "
                f"{present}"
            )
        chains = (present[0], present[1])
    a, b = chains
    idx_a = np.where(chain_ids == a)[0]
    idx_b = np.where(chain_ids == b)[0]
    if idx_a.size == 0 or idx_b.size == 0:
        raise TopologyError(f"chain {a if idx_a.size == 0 else b} is empty")
    return idx_a, idx_b


def detect_interface(crystal, cutoff=DEFAULT_INTERFACE_CUTOFF):
    """Cross-chain CA contacts of the reference structure as residue sets.

    A residue is part of the interface when its CA lies within ``cutoff``
    of any CA on the partner chain.  Indices are global residue positions.
    """
    idx_a, idx_b = _two_chain_split(crystal.chain_ids)
    ca = crystal.ca()
    diff = ca[idx_a][:, None, :] - ca[idx_b][None, :, :]
    dist = np.sqrt(np.einsum("abc,abc->ab", diff, diff))
    close = dist <= cutoff
    residues_a = idx_a[close.any(axis=1)]
    residues_b = idx_b[close.any(axis=0)]
    return InterfaceDefinition(residues_a, residues_b, float(cutoff))


def _frame_ca(frame):
    coords = frame.ca() if hasattr(frame, "ca") else np.asarray(frame, float)
    if coords.ndim == 3 and coords.shape[1:] == (3, 3):
        coords = coords[:, 1, :]
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ValueError(f"expected (R, 3) CA or (R, 3, 3) backbone, got {coords.shape}")
    return coords


def irmsd(frame, crystal, iface):
    """RMSD of the joint interface CA set after one shared superposition.

    Both monomers' interface atoms are fitted together, so rigid motion of
    the whole complex scores 0 while relative rearrangement does not.
    """
    if iface.is_empty:
        raise ValueError("interface is empty; IRMSD is undefined")
    sel = iface.joint()
    frame_ca = _frame_ca(frame)
    fit = kabsch(frame_ca[sel], crystal.ca()[sel])
    return fit.rmsd


def irmsd_series(traj, crystal, iface):
    if traj.n_residues != crystal.n_residues:
        raise ValueError(
            f"trajectory has {traj.n_residues} residues, reference "
            f"{crystal.n_residues}"
        )
    ca = traj.ca()
    return np.array([irmsd(ca[t], crystal, iface) for t in range(ca.shape[0])])


def cog_distance(frame, chain_ids, chains=None):
    """Distance between the unweighted CA centroids of the two chains."""
    ca = _frame_ca(frame)
    idx_a, idx_b = _two_chain_split(chain_ids, chains)
    return float(np.linalg.norm(ca[idx_a].mean(axis=0) - ca[idx_b].mean(axis=0)))


def cog_series(traj, chains=None):
    idx_a, idx_b = _two_chain_split(traj.chain_ids, chains)
    ca = traj.ca()
    delta = ca[:, idx_a].mean(axis=1) - ca[:, idx_b].mean(axis=1)
    return np.sqrt(np.einsum("tc,tc->t", delta, delta))


def kde_threshold(metric, grid_size=KDE_GRID_SIZE, min_samples=KDE_MIN_SAMPLES):
    """Bound/unbound threshold from the shape of the metric density.

    The density is a Scott-rule Gaussian KDE evaluated on a uniform grid
    over the sample range.  With two or more significant modes the
    threshold is the density minimum between the two tallest peaks; with a
    single mode it falls back to the steepest descending flank (the
    finite-difference derivative minimum).  Near-constant input has no
    usable density shape and yields NaN.
    """
    x = np.asarray(metric, dtype=np.float64)
    x = x[np.isfinite(x)]
    if x.size < min_samples:
        raise ValueError(
            f"threshold estimation needs at least {min_samples} samples, "
            f"got {x.size}"
        )
    spread = np.ptp(x)
    if spread <= 1e-9 * max(1.0, np.abs(x).max()):
        return float("nan")
    kde = scipy.stats.gaussian_kde(x)
    grid = np.linspace(x.min(), x.max(), grid_size)
    pdf = kde(grid)
    # prominence separates true modes from sampling ripples on the flanks
    peaks, props = scipy.signal.find_peaks(
        pdf,
        height=PEAK_MIN_REL_HEIGHT * pdf.max(),
        prominence=PEAK_MIN_REL_PROMINENCE * pdf.max(),
    )
    if peaks.size >= 2:
        order = np.argsort(props["peak_heights"])[::-1]
        lo, hi = sorted(peaks[order[:2]])
        valley = lo + int(np.argmin(pdf[lo : hi + 1]))
        return float(grid[valley])
    deriv = np.gradient(pdf, grid)
    # exclude endpoints so the threshold stays strictly inside the range
    return float(grid[1 + int(np.argmin(deriv[1:-1]))])


def _stage1(x, label):
    model = pca_fit(x, whiten=True, n_components=2)
    ev = model.explained_variance
    if ev.shape[0] < 2 or ev[1] <= 1e-10 * max(ev[0], 1e-300):
        raise DegenerateModelError(
            f"monomer {label} features have rank < 2; two components are "
            "not identifiable"
        )
    return model


def _feature_blocks(f, d):
    """Column groups per residue; plain arrays fall back to one per column."""
    if hasattr(f, "columns") and hasattr(f, "n_residues") and f.n_residues:
        return [f.columns(r) for r in range(f.n_residues)]
    return [slice(c, c + 1) for c in range(d)]


def two_step_pca(fa, fb):
    """Whitened per-monomer PCA, then whitened PCA of the joint 4-vector.

    Contributions propagate each stage-2 loading back through the stage-1
    components (including the whitening scale) and report, per residue, its
    normalized share of the squared loading weight.
    """
    xa = np.asarray(fa.data if hasattr(fa, "data") else fa, dtype=np.float64)
    xb = np.asarray(fb.data if hasattr(fb, "data") else fb, dtype=np.float64)
    if xa.ndim != 2 or xb.ndim != 2:
        raise ValueError("monomer features must be (T, d) matrices")
    if xa.shape[0] != xb.shape[0]:
        raise ValueError(
            f"monomers disagree on frame count: {xa.shape[0]} vs {xb.shape[0]}"
        )
    stage1_a = _stage1(xa, "A")
    stage1_b = _stage1(xb, "B")
    z = np.hstack([stage1_a.transform(xa), stage1_b.transform(xb)])
    stage2 = pca_fit(z, whiten=True, n_components=2)
    projections = stage2.transform(z)

    blocks_a = _feature_blocks(fa, xa.shape[1])
    blocks_b = _feature_blocks(fb, xb.shape[1])
    contributions = np.empty((2, len(blocks_a) + len(blocks_b)))
    for i in range(2):
        w2 = stage2.components[i]
        # effective loading on the original features of each monomer;
        # stage-1 whitening rescales each component by 1/sqrt(variance)
        la = stage1_a.components.T @ (w2[:2] / np.sqrt(stage1_a.explained_variance))
        lb = stage1_b.components.T @ (w2[2:] / np.sqrt(stage1_b.explained_variance))
        weight_a = np.array([np.sum(la[blk] ** 2) for blk in blocks_a])
        weight_b = np.array([np.sum(lb[blk] ** 2) for blk in blocks_b])
        row = np.concatenate([weight_a, weight_b])
        contributions[i] = row / row.sum()
    return TwoStepPca(
        stage1_a,
        stage1_b,
        stage2,
        projections,
        contributions,
        n_residues_a=len(blocks_a),
    )


def knn_mi(pc, labels, k=MI_NEIGHBORS):
    """kNN mutual information between continuous features and class labels.

    Per sample, the Chebyshev radius of its k-th within-class neighbor is
    counted against the whole sample; digamma terms combine the counts.
    The estimate is clamped at zero.  When a class holds fewer than k+1
    samples its neighbor count shrinks accordingly.
    """
    x = np.asarray(pc, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"features must be (T,) or (T, m), got {x.shape}")
    y = np.asarray(labels)
    n = x.shape[0]
    if y.shape != (n,):
        raise ValueError("labels must match the feature frame count")
    if n < MI_MIN_SAMPLES:
        raise ValueError(f"MI estimation needs at least {MI_MIN_SAMPLES} samples")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise ValueError("MI needs both classes present")
    if counts.min() < 2:
        raise ValueError("every class needs at least 2 samples")

    radius = np.empty(n)
    k_used = np.empty(n)
    class_count = np.empty(n)
    for cls, count in zip(classes, counts):
        mask = y == cls
        kc = min(k, count - 1)
        tree = scipy.spatial.cKDTree(x[mask])
        dist, _ = tree.query(x[mask], k=kc + 1, p=np.inf)
        radius[mask] = np.nextafter(dist[:, -1], 0.0)
        k_used[mask] = kc
        class_count[mask] = count
    full = scipy.spatial.cKDTree(x)
    m = full.query_ball_point(x, radius, p=np.inf, return_length=True)
    mi = (
        digamma(n)
        - np.mean(digamma(class_count))
        + np.mean(digamma(k_used))
        - np.mean(digamma(m))
    )
    return float(max(mi, 0.0))


def association_report(series, metric_kind, mi_pc1, mi_pc12, model=None, top_n=5):
    """Summary dictionary for the JSON report."""
    top = []
    if model is not None:
        frac = model.contributions[0]
        order = np.argsort(frac)[::-1][:top_n]
        for r in order:
            monomer = "A" if r < model.n_residues_a else "B"
            local = int(r if r < model.n_residues_a else r - model.n_residues_a)
            top.append(
                {
                    "monomer": monomer,
                    "residue": local,
                    "fraction": float(frac[r]),
                }
            )
    threshold = series.threshold
    return {
        "metric_kind": MetricKind(metric_kind).value,
        "threshold": None if np.isnan(threshold) else float(threshold),
        "n_bound": series.n_bound,
        "n_unbound": series.n_unbound,
        "mi_pc1": float(mi_pc1),
        "mi_pc12": float(mi_pc12),
        "top_contributing_residues": top,
    }


def write_association_report(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_association_csv(series, projections, path):
    proj = np.asarray(projections, dtype=np.float64)
    if proj.shape != (series.metric.shape[0], 2):
        raise ValueError(
            f"projections must be (T, 2) matching the series, got {proj.shape}"
        )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "metric", "label", "pc1", "pc2"])
        for t in range(proj.shape[0]):
            writer.writerow(
                [
                    t,
                    repr(float(series.metric[t])),
                    int(series.labels[t]),
                    repr(float(proj[t, 0])),
                    repr(float(proj[t, 1])),
                ]
            )
