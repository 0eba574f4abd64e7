"""Cluster post-processing: Ward linkage, GMM expansion, concordance.

The density-based initial labeling is deliberately not reimplemented;
labels arrive from file (or from ``ward_cluster``) and this module covers
the downstream steps: Gaussian expansion of outliers, curation, silhouette
on a precomputed distance matrix, and chance-adjusted agreement scores.

Ward linkage is written out natively so merge tie-breaking is fully
deterministic (smallest (cost, id pair) wins); heights match the familiar
sqrt(2 * ESS-increase) convention, so published cut distances carry over.
AMI and ARI are taken from scikit-learn, which implements the standard
permutation-model adjustment.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import sklearn.metrics

__all__ = [
    "ClusterLabels",
    "GaussianCluster",
    "WardMerge",
    "ward_cluster",
    "ward_linkage",
    "gmm_expand",
    "silhouette_precomputed",
    "ami",
    "ari",
    "curate",
    "read_labels_csv",
    "write_labels_csv",
]

OUTLIER = -1
GMM_EPS = 0.01
COV_RIDGE = 1e-9


@dataclass(frozen=True)
class ClusterLabels:
    """Frame labels with -1 marking outliers and contiguous cluster ids.

    ``canonical`` records whether ids are size-sorted (cluster 0 largest).
    Expansion preserves the incoming ids, so its output may be
    non-canonical; ``canonicalize()`` restores the ordering.
    """

    labels: np.ndarray
    canonical: bool = True

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.ndim != 1:
            raise ValueError(f"labels must be 1-D, got shape {lab.shape}")
        if lab.size and lab.min() < -1:
            raise ValueError("labels below -1 are not allowed")
        ids = np.unique(lab[lab >= 0])
        if ids.size and not np.array_equal(ids, np.arange(ids.size)):
            raise ValueError(f"cluster ids must be contiguous from 0, got {ids}")
        object.__setattr__(self, "labels", lab)
        if self.canonical and ids.size:
            counts = np.bincount(lab[lab >= 0])
            if np.any(np.diff(counts) > 0):
                raise ValueError(
                    "canonical labels must be size-sorted; use "
                    "ClusterLabels(..., canonical=False) or canonicalize()"
                )

    @property
    def n_frames(self):
        return self.labels.shape[0]

    @property
    def n_clusters(self):
        nonneg = self.labels[self.labels >= 0]
        return int(nonneg.max() + 1) if nonneg.size else 0

    def sizes(self):
        return np.bincount(
            self.labels[self.labels >= 0], minlength=self.n_clusters
        )

    def canonicalize(self):
        """Relabel so cluster 0 is largest; size ties keep first-seen order."""
        if self.n_clusters == 0:
            return ClusterLabels(self.labels.copy())
        counts = self.sizes()
        first_seen = np.full(self.n_clusters, self.n_frames)
        for i, lab in enumerate(self.labels):
            if lab >= 0 and first_seen[lab] == self.n_frames:
                first_seen[lab] = i
        order = sorted(range(self.n_clusters), key=lambda k: (-counts[k], first_seen[k]))
        remap = np.empty(self.n_clusters, dtype=np.int64)
        for new, old in enumerate(order):
            remap[old] = new
        out = self.labels.copy()
        mask = out >= 0
        out[mask] = remap[out[mask]]
        return ClusterLabels(out)


@dataclass(frozen=True)
class GaussianCluster:
    """Per-cluster Gaussian fit plus its 95th-percentile reference density."""

    mean: np.ndarray
    covariance: np.ndarray
    ref_density: float

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=np.float64)
        if np.abs(cov - cov.T).max() > 1e-9:
            raise ValueError("covariance must be symmetric")
        if not self.ref_density > 0:
            raise ValueError("reference density must be positive")

    def pdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d = x.shape[1]
        diff = x - self.mean
        cov_inv = np.linalg.inv(self.covariance)
        q = np.einsum("ti,ij,tj->t", diff, cov_inv, diff)
        norm = np.sqrt((2.0 * np.pi) ** d * np.linalg.det(self.covariance))
        return np.exp(-0.5 * q) / norm


@dataclass(frozen=True)
class WardMerge:
    a: int  # cluster ids in creation order (originals 0..n-1 first)
    b: int
    height: float
    size: int


def ward_linkage(points):
    """Full Ward dendrogram with deterministic tie-breaking.

    Works on the squared-distance Lance-Williams recurrence; reported
    heights are sqrt of the Ward cost (twice the ESS increase), matching
    the common linkage convention.  Cost ties merge the lexicographically
    smallest (a, b) id pair, ids counted in creation order.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n < 2:
        raise ValueError("ward linkage needs at least 2 points")
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)

    size = np.ones(n)
    slot_id = np.arange(n)  # slot -> current cluster id
    merges = []
    next_id = n
    for _ in range(n - 1):
        cost = d2.min()
        si, sj = np.unravel_index(np.argmin(d2), d2.shape)
        ties = np.argwhere(d2 == cost)
        if ties.shape[0] > 2:  # tie beyond the symmetric twin
            pairs = {
                tuple(sorted((slot_id[p], slot_id[q]))) for p, q in ties
            }
            ida, idb = min(pairs)
            si = int(np.where(slot_id == ida)[0][0])
            sj = int(np.where(slot_id == idb)[0][0])
        elif slot_id[si] > slot_id[sj]:
            si, sj = sj, si
        new_size = size[si] + size[sj]
        merges.append(
            WardMerge(
                int(slot_id[si]), int(slot_id[sj]),
                float(np.sqrt(cost)), int(new_size),
            )
        )
        upd = (
            (size[si] + size) * d2[si]
            + (size[sj] + size) * d2[sj]
            - size * cost
        ) / (new_size + size)
        upd[si] = np.inf
        upd[sj] = np.inf
        d2[si] = upd
        d2[:, si] = upd
        d2[sj] = np.inf
        d2[:, sj] = np.inf
        size[si] = new_size
        slot_id[si] = next_id
        slot_id[sj] = -1
        next_id += 1
    return merges


def ward_cluster(points, cut_distance):
    """Flat labels from Ward linkage cut at ``cut_distance`` (inclusive)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n == 1:
        return ClusterLabels(np.zeros(1, dtype=np.int64))
    merges = ward_linkage(pts)
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for next_id, m in enumerate(merges, start=n):
        if m.height <= cut_distance:
            parent[find(m.a)] = next_id
            parent[find(m.b)] = next_id
    roots = {}
    raw = np.empty(n, dtype=np.int64)
    for i in range(n):
        r = find(i)
        raw[i] = roots.setdefault(r, len(roots))
    return ClusterLabels(raw, canonical=False).canonicalize()


def _fit_cluster(x, members):
    pts = x[members]
    mean = pts.mean(axis=0)
    cov = np.cov(pts, rowvar=False, ddof=0)
    cov = np.atleast_2d(cov)
    min_eig = np.linalg.eigvalsh(cov).min()
    if min_eig <= 0.0:
        ridge = COV_RIDGE * np.trace(cov)
        if ridge <= 0.0:
            ridge = COV_RIDGE
        warnings.warn(
            "singular cluster covariance; adding diagonal ridge",
            RuntimeWarning,
            stacklevel=3,
        )
        cov = cov + ridge * np.eye(cov.shape[0])
    tmp = GaussianCluster(mean, cov, ref_density=1.0)
    dens = tmp.pdf(pts)
    ref = float(np.percentile(dens, 95.0))
    return GaussianCluster(mean, cov, ref_density=ref)


def gmm_expand(embedding, labels, eps=GMM_EPS):
    """Assign outliers to Gaussian fits of the existing clusters.

    Each cluster gets a (mean, covariance) fit and a reference density (the
    95th percentile of its member densities).  An outlier joins the cluster
    maximizing p_k(x) / p_k_ref when that maximum reaches ``eps``, ties to
    the lower id.  Existing assignments are never touched, and ids are kept
    as-is (the output is non-canonical when expansion changes the size
    order).  Returns (labels, fitted clusters).
    """
    x = np.asarray(embedding, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"embedding must be (T, d), got {x.shape}")
    lab = labels.labels if isinstance(labels, ClusterLabels) else None
    if lab is None:
        lab = ClusterLabels(np.asarray(labels), canonical=False).labels
    if lab.shape[0] != x.shape[0]:
        raise ValueError("embedding and labels disagree on frame count")
    k = int(lab.max() + 1) if np.any(lab >= 0) else 0
    if k == 0:
        raise ValueError("expansion needs at least one labeled cluster")
    fits = []
    for c in range(k):
        members = np.where(lab == c)[0]
        if members.size < 3:
            raise ValueError(
                f"cluster {c} has {members.size} members; need >= 3 to "
                "estimate a covariance"
            )
        fits.append(_fit_cluster(x, members))
    out = lab.copy()
    outliers = np.where(lab == OUTLIER)[0]
    if outliers.size:
        rel = np.stack(
            [f.pdf(x[outliers]) / f.ref_density for f in fits], axis=1
        )
        best = np.argmax(rel, axis=1)  # argmax takes the lowest id on ties
        accept = rel[np.arange(outliers.size), best] >= eps
        out[outliers[accept]] = best[accept]
    return ClusterLabels(out, canonical=False), fits


def silhouette_precomputed(dist, labels):
    """Mean silhouette over labeled frames on a precomputed distance matrix.

    Outliers are excluded entirely; singleton clusters contribute 0.  With
    fewer than two clusters the score is undefined (NaN).
    """
    d = dist.values if hasattr(dist, "values") else np.asarray(dist, float)
    lab = labels.labels if isinstance(labels, ClusterLabels) else np.asarray(labels)
    if d.shape[0] != lab.shape[0]:
        raise ValueError("distance matrix and labels disagree on frame count")
    keep = lab >= 0
    ids = np.unique(lab[keep])
    if ids.size < 2:
        return float("nan")
    scores = []
    for i in np.where(keep)[0]:
        own = (lab == lab[i]) & keep
        n_own = np.count_nonzero(own)
        if n_own == 1:
            scores.append(0.0)
            continue
        a = d[i, own].sum() / (n_own - 1)  # exclude self distance (zero)
        b = min(
            d[i, (lab == c) & keep].mean() for c in ids if c != lab[i]
        )
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))


def _coassigned(a, b):
    la = a.labels if isinstance(a, ClusterLabels) else np.asarray(a)
    lb = b.labels if isinstance(b, ClusterLabels) else np.asarray(b)
    if la.shape != lb.shape:
        raise ValueError("labelings must cover the same frames")
    keep = (la >= 0) & (lb >= 0)
    return la[keep], lb[keep]


def ami(a, b):
    """Adjusted mutual information on frames assigned in both labelings."""
    la, lb = _coassigned(a, b)
    if la.size == 0:
        return float("nan")
    return float(sklearn.metrics.adjusted_mutual_info_score(la, lb))


def ari(a, b):
    """Adjusted Rand index on frames assigned in both labelings."""
    la, lb = _coassigned(a, b)
    if la.size == 0:
        return float("nan")
    return float(sklearn.metrics.adjusted_rand_score(la, lb))


def curate(labels, drop):
    """Drop the given cluster ids to outliers and re-sort the rest by size."""
    lab = labels.labels if isinstance(labels, ClusterLabels) else np.asarray(labels)
    lab = np.asarray(lab, dtype=np.int64)
    present = set(np.unique(lab[lab >= 0]).tolist())
    drop = set(int(c) for c in drop)
    unknown = drop - present
    if unknown:
        raise ValueError(f"cannot drop unknown cluster ids {sorted(unknown)}")
    out = lab.copy()
    for c in drop:
        out[out == c] = OUTLIER
    kept = sorted(present - drop)
    remap = {old: new for new, old in enumerate(kept)}
    mask = out >= 0
    if mask.any():
        out[mask] = np.vectorize(remap.get)(out[mask])
    return ClusterLabels(out, canonical=False).canonicalize()


def write_labels_csv(labels, path):
    lab = labels.labels if isinstance(labels, ClusterLabels) else labels
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "label"])
        for t, c in enumerate(lab):
            writer.writerow([t, int(c)])


def read_labels_csv(path, n_frames=None):
    """Load frame,label CSV; labels are canonicalized on ingestion."""
    rows = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() == "frame":
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: line {lineno}: expected frame,label")
            try:
                frame, lab = int(row[0]), int(row[1])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            if frame in rows:
                raise ValueError(f"{path}: duplicate frame {frame}")
            rows[frame] = lab
    if not rows:
        raise ValueError(f"{path}: no label rows")
    count = n_frames if n_frames is not None else max(rows) + 1
    if set(rows) != set(range(count)):
        missing = sorted(set(range(count)) - set(rows))[:5]
        raise ValueError(f"{path}: missing frames {missing}")
    lab = np.array([rows[i] for i in range(count)], dtype=np.int64)
    lab[lab < 0] = OUTLIER
    # compress arbitrary ingested ids to contiguous ones, then size-sort
    ids = np.unique(lab[lab >= 0])
    remap = {old: new for new, old in enumerate(ids.tolist())}
    mask = lab >= 0
    if ids.size:
        lab[mask] = np.vectorize(remap.get)(lab[mask])
    return ClusterLabels(lab, canonical=False).canonicalize()
