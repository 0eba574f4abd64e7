"""Slow-mode analysis of feature series: whitened PCA, TICA, VAMP-2.

The pipeline follows the AMUSE layout: PCA with whitening reduces the
feature matrix, TICA solves the generalized eigenproblem C(tau) v = lambda
C(0) v on the whitened series, and the VAMP-2 score sums squared singular
values of the half-weighted time-lagged covariance.

Estimation detail that matters: C(0) is accumulated over both the leading
and trailing windows and C(tau) is symmetrized.  With that (reversible)
estimator every generalized eigenvalue is real with |lambda| <= 1, so
implied timescales never blow up from estimator noise alone.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "PcaModel",
    "TicaModel",
    "LagSearchResult",
    "pca_fit",
    "tica_fit",
    "implied_timescale",
    "find_plateau",
    "lag_search",
    "vamp2_score",
    "amuse",
]

C0_RIDGE = 1e-10
C0_RIDGE_FLOOR = 1e-12


def _as_array(f):
    data = f.data if hasattr(f, "data") else f
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"expected a (T, d) series, got shape {data.shape}")
    return data


@dataclass(frozen=True)
class PcaModel:
    """Principal components retained up to a cumulative-EVR threshold."""

    mean: np.ndarray
    components: np.ndarray  # (k, d), rows orthonormal
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    whiten: bool

    @property
    def n_components(self):
        return self.components.shape[0]

    def transform(self, x):
        x = _as_array(x)
        z = (x - self.mean) @ self.components.T
        if self.whiten:
            scale = np.sqrt(self.explained_variance)
            z = np.divide(z, scale, out=np.zeros_like(z), where=scale > 0)
        return z

    def inverse_transform(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.whiten:
            z = z * np.sqrt(self.explained_variance)
        return z @ self.components + self.mean


@dataclass(frozen=True)
class TicaModel:
    """Generalized eigenpairs of the time-lagged covariance problem."""

    lag: int
    eigenvalues: np.ndarray  # sorted by |lambda|, descending
    eigenvectors: np.ndarray  # (d, k), i-th column pairs with eigenvalues[i]
    timescales: np.ndarray  # frames; NaN when lambda <= 0, inf when >= 1
    vamp2: float
    symmetrized: bool = True

    def transform(self, x):
        return _as_array(x) @ self.eigenvectors


@dataclass(frozen=True)
class LagSearchResult:
    lags: np.ndarray
    timescale_curve: np.ndarray  # slowest implied timescale per lag
    plateau_lag: int | None
    models: tuple = field(repr=False, default=())


def pca_fit(f, evr_threshold=0.95, whiten=True, n_components=None):
    """Fit PCA keeping the minimal component count reaching the EVR target.

    ``n_components`` overrides the threshold with a fixed component count.
    Zero-variance input degenerates to a single dummy component (with a
    warning) instead of failing, so downstream stages can still run.
    """
    if not 0.0 < evr_threshold <= 1.0:
        raise ValueError(f"evr_threshold must be in (0, 1], got {evr_threshold}")
    x = _as_array(f)
    t, d = x.shape
    if t < 2:
        raise ValueError("PCA needs at least 2 frames")
    if n_components is not None and not 1 <= n_components <= d:
        raise ValueError(
            f"n_components must be in [1, {d}], got {n_components}"
        )
    mean = x.mean(axis=0)
    xc = x - mean
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    ev = s**2 / (t - 1)
    total = ev.sum()
    if total <= 0.0:
        warnings.warn(
            "input has zero variance; returning a degenerate single-component "
            "model",
            RuntimeWarning,
            stacklevel=2,
        )
        components = np.zeros((1, d))
        components[0, 0] = 1.0
        return PcaModel(mean, components, np.zeros(1), np.ones(1), whiten)
    evr = ev / total
    if n_components is not None:
        k = int(n_components)
        if k > len(evr):
            raise ValueError(
                f"n_components={k} exceeds the {len(evr)} available directions"
            )
    else:
        k = int(np.searchsorted(np.cumsum(evr), evr_threshold - 1e-12) + 1)
        k = min(k, len(evr))
    components = vt[:k]
    # deterministic sign: largest-magnitude entry of each component positive
    flip = np.sign(components[np.arange(k), np.argmax(np.abs(components), axis=1)])
    flip[flip == 0] = 1.0
    components = components * flip[:, None]
    return PcaModel(mean, components, ev[:k], evr[:k], whiten)


def _lagged_covariances(x, lag, symmetrize):
    t, d = x.shape
    if not 1 <= lag < t:
        raise ValueError(f"lag must satisfy 1 <= lag < T={t}, got {lag}")
    x0 = x[:-lag]
    xt = x[lag:]
    n = t - lag
    if symmetrize:
        c0 = (x0.T @ x0 + xt.T @ xt) / (2.0 * n)
        ct = (x0.T @ xt + xt.T @ x0) / (2.0 * n)
    else:
        c0 = x0.T @ x0 / n
        ct = x0.T @ xt / n
    ridge = C0_RIDGE * np.trace(c0) / d
    if ridge <= 0.0:
        ridge = C0_RIDGE_FLOOR
    c0 = c0 + ridge * np.eye(d)
    return c0, ct


def tica_fit(x, lag, symmetrize=True):
    """Solve C(tau) v = lambda C(0) v on a whitened series.

    ``symmetrize=False`` exposes the literal nonsymmetric estimator for
    comparison; its eigenvalues lose the |lambda| <= 1 guarantee.
    """
    x = _as_array(x)
    c0, ct = _lagged_covariances(x, lag, symmetrize)
    if symmetrize:
        vals, vecs = scipy.linalg.eigh(ct, c0)
    else:
        vals, vecs = scipy.linalg.eig(ct, c0)
        if np.abs(vals.imag).max() > 1e-8:
            warnings.warn(
                "nonsymmetric TICA produced complex eigenvalues; keeping the "
                "real part",
                RuntimeWarning,
                stacklevel=2,
            )
        vals = vals.real
        vecs = vecs.real
    order = np.argsort(-np.abs(vals), kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    return TicaModel(
        lag=int(lag),
        eigenvalues=vals,
        eigenvectors=vecs,
        timescales=implied_timescale(vals, lag),
        vamp2=vamp2_score(x, lag, k=x.shape[1], symmetrize=symmetrize),
        symmetrized=symmetrize,
    )


def implied_timescale(lam, tau):
    """-tau / ln(lambda), with NaN for lambda <= 0 and +inf for lambda >= 1."""
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    lam = np.asarray(lam, dtype=np.float64)
    out = np.full(lam.shape, np.nan)
    open_interval = (lam > 0.0) & (lam < 1.0)
    out[open_interval] = -tau / np.log(lam[open_interval])
    out[lam >= 1.0] = np.inf
    if out.ndim == 0:
        return float(out)
    return out


def _slowest(timescales):
    finite_or_inf = timescales[~np.isnan(timescales)]
    if finite_or_inf.size == 0:
        return np.nan
    return float(np.max(finite_or_inf))


def find_plateau(lags, curve, rel_tol=0.1, run=3):
    """First lag from which the slowest timescale stays settled.

    A lag qualifies when the forward relative change of the curve stays
    below ``rel_tol`` for ``run`` consecutive increments starting there; an
    exactly flat curve therefore plateaus at the first grid lag.  Undefined
    curve values (NaN from negative eigenvalues) break any run.  Returns
    None when the curve never settles.
    """
    lags = np.asarray(lags)
    curve = np.asarray(curve, dtype=np.float64)
    n = len(lags)
    rel = np.full(max(n - 1, 0), np.inf)
    for j in range(n - 1):
        if np.isfinite(curve[j]) and curve[j] > 0 and np.isfinite(curve[j + 1]):
            rel[j] = abs(curve[j + 1] - curve[j]) / curve[j]
    for j in range(n - run):
        if np.all(rel[j : j + run] < rel_tol):
            return int(lags[j])
    return None


def lag_search(x, n_lags=10, lo_frac=0.01, hi_frac=0.10, symmetrize=True):
    """Scan a lag grid and locate the implied-timescale plateau.

    The grid is ``n_lags`` evenly spaced lags between ``lo_frac*T`` and
    ``hi_frac*T``, rounded and deduplicated.  ``plateau_lag`` is None when
    the curve never settles, which is a legitimate outcome, not a failure.
    """
    x = _as_array(x)
    t = x.shape[0]
    if int(lo_frac * t) < 1:
        raise ValueError(
            f"series of {t} frames is too short: the {lo_frac:.0%} lag is "
            "below one frame"
        )
    raw = np.linspace(lo_frac * t, hi_frac * t, n_lags)
    lags = np.unique(np.round(raw).astype(int))
    lags = lags[lags >= 1]
    models = tuple(tica_fit(x, int(tau), symmetrize=symmetrize) for tau in lags)
    curve = np.array([_slowest(m.timescales) for m in models])
    return LagSearchResult(lags, curve, find_plateau(lags, curve), models)


def vamp2_score(x, lag, k=None, symmetrize=True):
    """Sum of the top-k squared singular values of C0^{-1/2} Ct C0^{-1/2}."""
    x = _as_array(x)
    if k is None:
        k = x.shape[1]
    if not 1 <= k <= x.shape[1]:
        raise ValueError(f"k must be in [1, {x.shape[1]}], got {k}")
    c0, ct = _lagged_covariances(x, lag, symmetrize)
    vals, vecs = np.linalg.eigh(c0)
    vals = np.clip(vals, 0.0, None)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    half = inv_sqrt @ ct @ inv_sqrt
    sigma = np.linalg.svd(half, compute_uv=False)
    return float(np.sum(np.sort(sigma)[::-1][:k] ** 2))


def amuse(f, evr_threshold=0.95, lag=10, whiten=True, symmetrize=True):
    """PCA + TICA in sequence; returns (pca, tica, leading projections).

    Projections hold the first two TICs (or fewer when the whitened space
    is smaller).
    """
    pca = pca_fit(f, evr_threshold, whiten=whiten)
    z = pca.transform(f)
    if pca.explained_variance.max(initial=0.0) <= 0.0:
        warnings.warn(
            "degenerate PCA model: projections are identically zero",
            RuntimeWarning,
            stacklevel=2,
        )
    tica = tica_fit(z, lag, symmetrize=symmetrize)
    n_proj = min(2, tica.eigenvectors.shape[1])
    projections = z @ tica.eigenvectors[:, :n_proj]
    return pca, tica, projections
