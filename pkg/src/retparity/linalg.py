"""Dense LU solve with partial pivoting.

Matrices are plain 2-D float ``numpy`` arrays (row-major); the helpers here
only add the validation the rest of the package relies on.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue, SingularMatrix

PIVOT_TOL = 1e-12


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array."""
    m = np.array(a, dtype=float, copy=True)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return m


def lu_factor(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Doolittle factorisation ``P A = L U`` stored in one array.

    Returns the packed LU array and the row permutation. Raises
    ``SingularMatrix`` when the largest available pivot in some column falls
    below ``PIVOT_TOL``.
    """
    lu = as_matrix(a, "A")
    n, cols = lu.shape
    if n != cols:
        raise DimensionMismatch(f"A must be square, got {lu.shape}")
    perm = np.arange(n)
    for k in range(n):
        col = lu[k:, k]
        p = k + int(np.abs(col).argmax())
        if abs(lu[p, k]) < PIVOT_TOL:
            raise SingularMatrix(f"pivot {abs(lu[p, k]):.3e} in column {k}")
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        if k + 1 < n:
            lu[k + 1:, k] /= lu[k, k]
            lu[k + 1:, k + 1:] -= lu[k + 1:, k, None] * lu[k, None, k + 1:]
    return lu, perm


def lu_solve(a, b) -> np.ndarray:
    """Solve ``A x = b`` for square nonsingular ``A``.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    """
    lu, perm = lu_factor(a)
    rhs = np.asarray(b, dtype=float)
    if rhs.shape[0] != lu.shape[0]:
        raise DimensionMismatch(f"b has {rhs.shape[0]} rows, A has {lu.shape[0]}")
    if not np.isfinite(rhs).all():
        raise NonFiniteValue("b contains NaN or Inf")
    n = lu.shape[0]
    y = rhs[perm]  # fancy indexing already copies
    for i in range(1, n):
        y[i] -= lu[i, :i] @ y[:i]
    y[n - 1] /= lu[n - 1, n - 1]
    for i in range(n - 2, -1, -1):
        y[i] = (y[i] - lu[i, i + 1:] @ y[i + 1:]) / lu[i, i]
    return y
