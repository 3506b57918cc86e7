"""Principal components by power iteration with deflation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, DimensionMismatch, InvalidParameter

POWER_TOL = 1e-9
POWER_MAX_ITER = 10000
MIN_VARIANCE = 1e-12


@dataclass
class PcaResult:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    variances: np.ndarray  # eigenvalues of the sample covariance, descending
    total_variance: float

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) @ self.components.T

    @property
    def explained_ratio(self) -> np.ndarray:
        return self.variances / self.total_variance


def _fix_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def _top_eigvec(C: np.ndarray, start: np.ndarray) -> tuple[np.ndarray, float]:
    v = start / np.linalg.norm(start)
    lam = 0.0
    for _ in range(POWER_MAX_ITER):
        w = C @ v
        norm = np.linalg.norm(w)
        if norm < MIN_VARIANCE:
            return v, 0.0
        w /= norm
        # sign-insensitive convergence check
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < POWER_TOL:
            v = w
            break
        v = w
    lam = float(v @ C @ v)
    return v, lam


def fit_pca(x, components: int = 2) -> PcaResult:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionMismatch("PCA needs an N x d array with N >= 2")
    d = x.shape[1]
    if not (1 <= components <= d):
        raise InvalidParameter(f"components must lie in [1, {d}], got {components}")
    mean = x.mean(axis=0)
    xc = x - mean
    C = xc.T @ xc / (x.shape[0] - 1)
    total = float(np.trace(C))
    if total < MIN_VARIANCE:
        raise DegenerateData(f"total variance {total:.3g} is below {MIN_VARIANCE}")
    comps, lams = [], []
    work = C.copy()
    for k in range(components):
        # deterministic start that is unlikely to be orthogonal to the top eigenvector
        start = np.ones(d) + 0.01 * np.arange(d)
        for u in comps:
            start -= (start @ u) * u
        if np.linalg.norm(start) < 1e-12:
            start = np.eye(d)[k]
        v, lam = _top_eigvec(work, start)
        for u in comps:  # re-orthogonalise against earlier components
            v -= (v @ u) * u
        v = _fix_sign(v / np.linalg.norm(v))
        lam = max(float(v @ C @ v), 0.0)
        comps.append(v)
        lams.append(lam)
        work = work - lam * np.outer(v, v)
    return PcaResult(mean, np.array(comps), np.array(lams), total)


def project_groups(batches, components: int = 2) -> tuple[PcaResult, np.ndarray, np.ndarray]:
    """Fit on the pooled batches; returns (fit, projected points, group labels)."""
    batches = [np.asarray(b, dtype=float) for b in batches]
    dims = {b.shape[1] for b in batches if b.ndim == 2}
    if len(dims) != 1 or any(b.ndim != 2 for b in batches):
        raise DimensionMismatch("feature batches must be 2-D with a shared dimension")
    pooled = np.vstack(batches)
    fit = fit_pca(pooled, components)
    labels = np.concatenate([np.full(len(b), g) for g, b in enumerate(batches)])
    return fit, fit.project(pooled), labels
