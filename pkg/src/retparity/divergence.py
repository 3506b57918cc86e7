"""Distances between distributions and between policies.

Kernel convention: a bandwidth ``b`` denotes ``k_b(x, y) = exp(-|x - y|^2 / (2 b))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (BatchTooSmall, DimensionMismatch, InvalidParameter, UnequalCounts,
                     ValidationError)
from .lp import LpProblem, LpStatus, Sense, lp_solve
from .mdp import Policy

DEFAULT_BANDWIDTHS = (0.001, 0.005, 0.01, 0.05, 0.1, 1.0, 5.0, 10.0)


@dataclass(frozen=True)
class KernelSpec:
    """Mixture of RBF kernels; weights default to equal and are normalised to sum 1."""

    bandwidths: tuple[float, ...] = DEFAULT_BANDWIDTHS
    weights: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        bw = tuple(float(b) for b in self.bandwidths)
        if not bw:
            raise InvalidParameter("KernelSpec needs at least one bandwidth")
        if any(not np.isfinite(b) or b <= 0 for b in bw):
            raise InvalidParameter(f"bandwidths must be positive, got {bw}")
        w = self.weights
        if w is None:
            w = tuple(1.0 / len(bw) for _ in bw)
        else:
            w = tuple(float(x) for x in w)
            if len(w) != len(bw) or any(x < 0 for x in w) or sum(w) <= 0:
                raise InvalidParameter("weights must be nonnegative, one per bandwidth")
            s = sum(w)
            w = tuple(x / s for x in w)
        object.__setattr__(self, "bandwidths", bw)
        object.__setattr__(self, "weights", w)

    def gram(self, sqdist: np.ndarray) -> np.ndarray:
        out = np.zeros_like(sqdist)
        for b, w in zip(self.bandwidths, self.weights):
            out += w * np.exp(-sqdist / (2.0 * b))
        return out

    def gram_and_slope(self, sqdist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Kernel values and ``dk/d(sqdist)`` elementwise."""
        k = np.zeros_like(sqdist)
        dk = np.zeros_like(sqdist)
        for b, w in zip(self.bandwidths, self.weights):
            e = w * np.exp(-sqdist / (2.0 * b))
            k += e
            dk -= e / (2.0 * b)
        return k, dk


def _as_distribution(p, name: str) -> np.ndarray:
    v = np.asarray(p, dtype=float).ravel()
    if np.any(v < -1e-9) or abs(v.sum() - 1.0) > 1e-9:
        raise ValidationError(f"{name} is not a probability vector")
    return v


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = _as_distribution(p, "p")
    q = _as_distribution(q, "q")
    if p.shape != q.shape:
        raise DimensionMismatch(f"distributions have lengths {p.size} and {q.size}")
    return p, q


def total_variation(p, q) -> float:
    p, q = _pair(p, q)
    return 0.5 * float(np.sum(np.abs(p - q)))


def policy_discrepancy(pi0: Policy, pi1: Policy, s: int) -> float:
    """``|pi0(.|s) - pi1(.|s)|_1``."""
    if pi0.shape != pi1.shape:
        raise DimensionMismatch(f"policy shapes {pi0.shape} and {pi1.shape} differ")
    if not (0 <= s < pi0.shape[0]):
        raise IndexError(f"state index {s} out of range [0, {pi0.shape[0]})")
    return float(np.sum(np.abs(pi0.pi[s] - pi1.pi[s])))


def policy_discrepancies(pi0: Policy, pi1: Policy) -> np.ndarray:
    if pi0.shape != pi1.shape:
        raise DimensionMismatch(f"policy shapes {pi0.shape} and {pi1.shape} differ")
    return np.sum(np.abs(pi0.pi - pi1.pi), axis=1)


def wasserstein1_discrete(p, q, cost) -> float:
    """Exact optimal-transport cost between ``p`` and ``q`` under ``cost``.

    Solved as an LP over the ``m * m`` coupling with both marginals fixed.
    """
    p, q = _pair(p, q)
    C = np.asarray(cost, dtype=float)
    m = p.size
    if C.shape != (m, m):
        raise DimensionMismatch(f"cost must be {m} x {m}, got {C.shape}")
    if np.any(C < 0) or np.any(np.abs(np.diag(C)) > 0) or not np.allclose(C, C.T, atol=1e-12):
        raise ValidationError("cost must be a metric matrix: nonnegative, zero diagonal, symmetric")
    A = np.zeros((2 * m, m * m))
    for i in range(m):
        A[i, i * m:(i + 1) * m] = 1.0  # row marginal
        A[m + i, i::m] = 1.0  # column marginal
    prob = LpProblem(c=C.ravel(), A=A, b=np.concatenate([p, q]),
                     senses=(Sense.EQ,) * (2 * m), maximize=False)
    out = lp_solve(prob)
    if out.status is not LpStatus.OPTIMAL:
        raise ValidationError(f"transport LP returned {out.status.value}")
    return max(out.value, 0.0)


def discrete_metric(m: int) -> np.ndarray:
    return 1.0 - np.eye(m)


def wasserstein1_empirical_1d(x, y) -> float:
    x = np.sort(np.asarray(x, dtype=float).ravel())
    y = np.sort(np.asarray(y, dtype=float).ravel())
    if x.size != y.size:
        raise UnequalCounts(f"sample counts differ: {x.size} vs {y.size}")
    if x.size == 0:
        raise UnequalCounts("empty samples")
    return float(np.mean(np.abs(x - y)))


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _as_batch(h, name: str) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    if h.ndim != 2:
        raise DimensionMismatch(f"{name} must be an N x d array")
    return h


def mmd2_unbiased(h0, h1, k: KernelSpec) -> float:
    return mmd2_unbiased_grad(h0, h1, k, need_grad=False)[0]


def mmd2_unbiased_grad(h0, h1, k: KernelSpec, need_grad: bool = True):
    """Unbiased squared MMD and, optionally, its gradients w.r.t. both batches.

    Returns ``(value, grad_h0, grad_h1)``; the gradients are ``None`` when
    ``need_grad`` is false.
    """
    x = _as_batch(h0, "h0")
    y = _as_batch(h1, "h1")
    n0, n1 = x.shape[0], y.shape[0]
    if n0 < 2 or n1 < 2:
        raise BatchTooSmall(f"unbiased MMD needs at least 2 samples per batch, got {n0}, {n1}")
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatch(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    dxx, dyy, dxy = _sqdist(x, x), _sqdist(y, y), _sqdist(x, y)
    if not need_grad:
        kxx, kyy, kxy = k.gram(dxx), k.gram(dyy), k.gram(dxy)
    else:
        (kxx, sxx), (kyy, syy), (kxy, sxy) = (k.gram_and_slope(d) for d in (dxx, dyy, dxy))
    np.fill_diagonal(kxx, 0.0)
    np.fill_diagonal(kyy, 0.0)
    cxx = 1.0 / (n0 * (n0 - 1))
    cyy = 1.0 / (n1 * (n1 - 1))
    cxy = 2.0 / (n0 * n1)
    value = float(cxx * kxx.sum() + cyy * kyy.sum() - cxy * kxy.sum())
    if not need_grad:
        return value, None, None
    np.fill_diagonal(sxx, 0.0)
    np.fill_diagonal(syy, 0.0)
    # d sqdist(a_i, b_j) / d a_i = 2 (a_i - b_j)
    def pull(s, a, b):
        return 2.0 * (s.sum(axis=1)[:, None] * a - s @ b)
    gx = cxx * 2.0 * pull(sxx, x, x) - cxy * pull(sxy, x, y)
    gy = cyy * 2.0 * pull(syy, y, y) - cxy * pull(sxy.T, y, x)
    return value, gx, gy


def mmd2_population(p, q, points, k: KernelSpec) -> float:
    """Exact squared MMD between two discrete distributions on ``points``."""
    p, q = _pair(p, q)
    pts = _as_batch(points, "points")
    if pts.shape[0] != p.size:
        raise DimensionMismatch(f"{pts.shape[0]} points for distributions of length {p.size}")
    K = k.gram(_sqdist(pts, pts))
    d = p - q
    return float(d @ K @ d)
