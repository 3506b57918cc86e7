"""Dense two-phase simplex with Bland's anti-cycling rule.

Sized for the small LPs in this package (a few hundred columns at most). The
tableau is kept in canonical form; phase 1 minimises the sum of artificial
variables, phase 2 optimises the user objective over the feasible basis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue, NumericalFailure

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-10
_COST_TOL = 1e-9
_MAX_PIVOTS = 200_000


class Sense(str, enum.Enum):
    LE = "<="
    EQ = "=="
    GE = ">="


class LpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass(frozen=True)
class LpProblem:
    """``max/min c.x  s.t.  A x (<=,==,>=) b,  x >= lower``.

    ``lower`` defaults to zero for every variable; an entry of ``-inf`` marks
    a free variable.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    senses: tuple[Sense, ...]
    lower: Optional[np.ndarray] = None
    maximize: bool = True

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).ravel()
        if A.ndim != 2:
            if A.size == 0:
                A = A.reshape(0, c.size)
            else:
                raise DimensionMismatch(f"A must be 2-D, got shape {A.shape}")
        if A.shape[1] != c.size:
            raise DimensionMismatch(f"|c| = {c.size} but A has {A.shape[1]} columns")
        if A.shape[0] != b.size:
            raise DimensionMismatch(f"|b| = {b.size} but A has {A.shape[0]} rows")
        senses = tuple(Sense(s) for s in self.senses)
        if len(senses) != b.size:
            raise DimensionMismatch(f"{len(senses)} senses for {b.size} rows")
        lower = np.zeros(c.size) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        if lower.size != c.size:
            raise DimensionMismatch(f"{lower.size} lower bounds for {c.size} variables")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise NonFiniteValue("LP data contains NaN or Inf")
        if np.any(np.isnan(lower)) or np.any(lower == np.inf):
            raise NonFiniteValue("lower bounds must be finite or -inf")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "senses", senses)
        object.__setattr__(self, "lower", lower)

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_rows(self) -> int:
        return self.b.size

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of ``x`` (0 when feasible)."""
        worst = float(np.max(self.lower - x, initial=0.0))
        if self.num_rows:
            ax = self.A @ x
            for s, lhs, rhs in zip(self.senses, ax, self.b):
                if s is Sense.LE:
                    worst = max(worst, lhs - rhs)
                elif s is Sense.GE:
                    worst = max(worst, rhs - lhs)
                else:
                    worst = max(worst, abs(lhs - rhs))
        return worst


@dataclass
class LpOutcome:
    status: LpStatus
    value: Optional[float] = None
    x: Optional[np.ndarray] = None
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def constraints(rows: Sequence[tuple[Sequence[float], str, float]], nvars: int):
    """Stack ``(coefficients, sense, rhs)`` triples into ``A, b, senses``."""
    if not rows:
        return np.zeros((0, nvars)), np.zeros(0), ()
    A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), nvars)
    b = np.array([r[2] for r in rows], dtype=float)
    return A, b, tuple(Sense(r[1]) for r in rows)


class _Tableau:
    """Canonical-form tableau ``[T | rhs]`` with an explicit basis."""

    def __init__(self, T: np.ndarray, basis: list[int]):
        self.T = T
        self.basis = basis
        self.pivots = 0

    def pivot(self, r: int, j: int) -> None:
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        nz = np.nonzero(col)[0]
        if nz.size:
            T[nz] -= np.outer(col[nz], T[r])
        self.basis[r] = j
        self.pivots += 1
        if self.pivots > _MAX_PIVOTS:
            raise NumericalFailure("simplex pivot limit exceeded")

    def minimize(self, cost: np.ndarray, ncols: int) -> bool:
        """Run Bland-rule simplex on columns ``[0, ncols)``.

        Returns False when the objective is unbounded below.
        """
        T = self.T
        while True:
            cb = cost[self.basis]
            reduced = cost[:ncols] - cb @ T[:, :ncols]
            candidates = np.nonzero(reduced < -_COST_TOL)[0]
            if candidates.size == 0:
                return True
            j = int(candidates[0])
            col = T[:, j]
            rows = np.nonzero(col > PIVOT_TOL)[0]
            if rows.size == 0:
                return False
            ratios = T[rows, -1] / col[rows]
            best = ratios.min()
            tied = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
            r = int(min(tied, key=lambda i: self.basis[i]))
            self.pivot(r, j)


def lp_solve(p: LpProblem) -> LpOutcome:
    """Solve ``p`` with the two-phase simplex method.

    Infeasible and unbounded problems are reported through ``status``; only
    malformed input or numerical breakdown raises.
    """
    if not isinstance(p, LpProblem):
        raise TypeError("lp_solve expects an LpProblem")

    # Variable substitution: x = lower + y (y >= 0), or x = y+ - y- when free.
    free = np.isneginf(p.lower)
    shift = np.where(free, 0.0, p.lower)
    colmap: list[tuple[int, float]] = []
    for j in range(p.num_vars):
        colmap.append((j, 1.0))
        if free[j]:
            colmap.append((j, -1.0))
    nstruct = len(colmap)
    M = np.empty((p.num_rows, nstruct))
    cost = np.empty(nstruct)
    sign_c = -1.0 if p.maximize else 1.0
    for k, (j, s) in enumerate(colmap):
        M[:, k] = s * p.A[:, j]
        cost[k] = sign_c * s * p.c[j]
    rhs = p.b - p.A @ shift

    # Equality rows become a <= / >= pair, then every rhs is made nonnegative.
    rows, senses, rvals = [], [], []
    for i, s in enumerate(p.senses):
        pairs = [Sense.LE, Sense.GE] if s is Sense.EQ else [s]
        for s2 in pairs:
            a, v = M[i], rhs[i]
            if v < 0:
                a, v = -a, -v
                s2 = Sense.GE if s2 is Sense.LE else Sense.LE
            rows.append(a)
            senses.append(s2)
            rvals.append(v)
    nrows = len(rows)
    nslack = nrows
    nart = sum(1 for s in senses if s is Sense.GE)
    ncols = nstruct + nslack + nart
    T = np.zeros((nrows, ncols + 1))
    basis = []
    art = nstruct + nslack
    for i in range(nrows):
        T[i, :nstruct] = rows[i]
        T[i, -1] = rvals[i]
        if senses[i] is Sense.LE:
            T[i, nstruct + i] = 1.0
            basis.append(nstruct + i)
        else:
            T[i, nstruct + i] = -1.0
            T[i, art] = 1.0
            basis.append(art)
            art += 1

    tab = _Tableau(T, basis)
    scale = max(1.0, float(np.max(np.abs(rvals), initial=0.0)))
    if nart:
        phase1 = np.zeros(ncols)
        phase1[nstruct + nslack:] = 1.0
        tab.minimize(phase1, ncols)
        if float(phase1[tab.basis] @ tab.T[:, -1]) > FEAS_TOL * scale:
            return LpOutcome(LpStatus.INFEASIBLE, pivots=tab.pivots)
        _drive_out_artificials(tab, nstruct + nslack)

    full_cost = np.zeros(ncols)
    full_cost[:nstruct] = cost
    if not tab.minimize(full_cost, nstruct + nslack):
        return LpOutcome(LpStatus.UNBOUNDED, pivots=tab.pivots)

    y = np.zeros(ncols)
    y[tab.basis] = tab.T[:, -1]
    x = shift.copy()
    for k, (j, s) in enumerate(colmap):
        x[j] += s * y[k]
    viol = p.max_violation(x)
    if viol > FEAS_TOL * max(1.0, float(np.max(np.abs(p.b), initial=0.0))):
        raise NumericalFailure(f"simplex returned a point violating constraints by {viol:.3e}")
    return LpOutcome(LpStatus.OPTIMAL, float(p.c @ x), x, tab.pivots)


def _drive_out_artificials(tab: _Tableau, first_art: int) -> None:
    r = 0
    while r < len(tab.basis):
        if tab.basis[r] >= first_art:
            row = tab.T[r, :first_art]
            nz = np.nonzero(np.abs(row) > PIVOT_TOL)[0]
            if nz.size:
                tab.pivot(r, int(nz[0]))
            else:
                # redundant row: remove it from the tableau
                tab.T = np.delete(tab.T, r, axis=0)
                del tab.basis[r]
                continue
        r += 1
