"""Occupancy-measure LP for jointly optimal policies under epsilon-return parity.

Variable layout of the LP: ``rho0`` (m*n, row-major by state), ``rho1``
(m*n), then ``b0`` and ``b1``. Flow balance for group 0 at state ``i``::

    sum_a rho0(i, a) - gamma * sum_{s,a} T0(i | s, a) rho0(s, a) - (b0 - b1) mu0[i] = lam * mu0[i]

and symmetrically for group 1 with ``1 - lam`` and ``(b1 - b0)``. The
objective is ``sum rho0 * r0 + sum rho1 * r1 - eps * (b0 + b1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParameter
from .lp import LpOutcome, LpProblem, LpStatus, Sense, lp_solve
from .mdp import GroupPair, Mdp, Policy, expected_return
from .parity import return_disparity

FLOW_TOL = 1e-6
ZERO_MASS = 1e-12


def flow_matrix(mdp: Mdp) -> np.ndarray:
    """``E[i, (s, a)] = [s == i] - gamma * T(i | s, a)`` (m x m*n)."""
    m, n = mdp.num_states, mdp.num_actions
    E = -mdp.gamma * mdp.transition.reshape(m * n, m).T
    for s in range(m):
        E[s, s * n:(s + 1) * n] += 1.0
    return E


def build_fair_lp(pair: GroupPair, epsilon: float) -> LpProblem:
    if not (np.isfinite(epsilon) and epsilon >= 0):
        raise InvalidParameter(f"epsilon must be a finite nonnegative number, got {epsilon}")
    m, n = pair.num_states, pair.num_actions
    k = m * n
    nv = 2 * k + 2
    mu0, mu1 = pair.mdp0.mu, pair.mdp1.mu
    A = np.zeros((2 * m, nv))
    A[:m, :k] = flow_matrix(pair.mdp0)
    A[:m, 2 * k] = -mu0
    A[:m, 2 * k + 1] = mu0
    A[m:, k:2 * k] = flow_matrix(pair.mdp1)
    A[m:, 2 * k] = mu1
    A[m:, 2 * k + 1] = -mu1
    b = np.concatenate([pair.lam * mu0, (1.0 - pair.lam) * mu1])
    c = np.concatenate([pair.mdp0.reward.ravel(), pair.mdp1.reward.ravel(), [-epsilon, -epsilon]])
    return LpProblem(c=c, A=A, b=b, senses=(Sense.EQ,) * (2 * m), maximize=True)


def recover_policy(rho: np.ndarray) -> Policy:
    """``pi(a|s) = rho(s, a) / sum_a' rho(s, a')``; uniform where the state has no mass."""
    rho = np.clip(np.asarray(rho, dtype=float), 0.0, None)
    m, n = rho.shape
    mass = rho.sum(axis=1, keepdims=True)
    pi = np.where(mass > ZERO_MASS, rho / np.where(mass > ZERO_MASS, mass, 1.0), 1.0 / n)
    return Policy(pi / pi.sum(axis=1, keepdims=True))


@dataclass
class FairLpSolution:
    status: LpStatus
    epsilon: float
    objective: Optional[float] = None
    rho0: Optional[np.ndarray] = None
    rho1: Optional[np.ndarray] = None
    b0: Optional[float] = None
    b1: Optional[float] = None
    pi0: Optional[Policy] = None
    pi1: Optional[Policy] = None
    achieved_disparity: Optional[float] = None
    return0: Optional[float] = None
    return1: Optional[float] = None
    max_flow_residual: Optional[float] = None

    @property
    def duals_zero(self) -> bool:
        """True when ``b0 = b1 = 0`` at the returned optimum."""
        return self.b0 is not None and abs(self.b0) <= FLOW_TOL and abs(self.b1) <= FLOW_TOL

    @property
    def occupancy_regime(self) -> bool:
        """True when ``b0 = b1``, the regime where ``rho`` are discounted counts."""
        return self.b0 is not None and abs(self.b0 - self.b1) <= FLOW_TOL

    @property
    def parity_met(self) -> Optional[bool]:
        if self.achieved_disparity is None:
            return None
        return self.achieved_disparity <= self.epsilon + 1e-5

    def to_dict(self) -> dict:
        d = {"status": self.status.value, "epsilon": self.epsilon}
        if self.status is LpStatus.OPTIMAL:
            d.update(objective=self.objective, b0=self.b0, b1=self.b1,
                     rho0=self.rho0.tolist(), rho1=self.rho1.tolist(),
                     pi0=self.pi0.pi.tolist(), pi1=self.pi1.pi.tolist(),
                     achieved_disparity=self.achieved_disparity,
                     return0=self.return0, return1=self.return1,
                     duals_zero=self.duals_zero, occupancy_regime=self.occupancy_regime,
                     parity_met=self.parity_met, max_flow_residual=self.max_flow_residual)
        return d


def solve_fair(pair: GroupPair, epsilon: float) -> FairLpSolution:
    prob = build_fair_lp(pair, epsilon)
    out = lp_solve(prob)
    if out.status is not LpStatus.OPTIMAL:
        return FairLpSolution(out.status, epsilon)
    m, n = pair.num_states, pair.num_actions
    k = m * n
    x = out.x
    rho0 = np.clip(x[:k], 0.0, None).reshape(m, n)
    rho1 = np.clip(x[k:2 * k], 0.0, None).reshape(m, n)
    b0, b1 = float(x[2 * k]), float(x[2 * k + 1])
    pi0, pi1 = recover_policy(rho0), recover_policy(rho1)
    r0 = expected_return(pair.mdp0, pi0)
    r1 = expected_return(pair.mdp1, pi1)
    residual = float(np.max(np.abs(prob.A @ x - prob.b)))
    return FairLpSolution(
        status=out.status, epsilon=epsilon, objective=out.value, rho0=rho0, rho1=rho1,
        b0=b0, b1=b1, pi0=pi0, pi1=pi1, achieved_disparity=abs(r0 - r1),
        return0=r0, return1=r1, max_flow_residual=residual)


@dataclass
class OptimumGapCertificate:
    """Feasible point of the alternative system: group ``group``'s occupancy
    ``rho`` (discounted counts) and a value upper bound ``value_bound`` for the
    other group with ``sum rho * r_group - mu_other . value_bound > epsilon``."""

    group: int
    rho: np.ndarray
    value_bound: np.ndarray
    margin: float

    def to_dict(self) -> dict:
        return {"group": self.group, "rho": self.rho.tolist(),
                "value_bound": self.value_bound.tolist(), "margin": self.margin}


@dataclass
class OptimumParityResult:
    holds: bool
    certificate: Optional[OptimumGapCertificate] = None

    def to_dict(self) -> dict:
        return {"holds": self.holds,
                "certificate": None if self.certificate is None else self.certificate.to_dict()}


def _strict_margin(pair: GroupPair) -> float:
    # must clear the simplex feasibility tolerance by a wide factor
    R = max(pair.mdp0.reward_bound, pair.mdp1.reward_bound, 1.0)
    return 1e-6 * R / (1.0 - pair.gamma)


def _alternative_system(hi: Mdp, lo: Mdp, epsilon: float, strict: float) -> LpProblem:
    """Feasible iff ``max_pi eta_hi - max_pi eta_lo > epsilon``.

    Variables: ``rho`` (m*n, >= 0) with flow balance under ``hi``, and a free
    vector ``V`` obeying the Bellman inequalities of ``lo``. Any such ``V``
    dominates the optimal values of ``lo``, so the strict inequality can only
    be met when the optimal returns differ by more than ``epsilon``.
    """
    m, n = hi.num_states, hi.num_actions
    k = m * n
    nv = k + m
    rows_flow = np.zeros((m, nv))
    rows_flow[:, :k] = flow_matrix(hi)
    # V(s) - gamma * sum_s' T(s'|s,a) V(s') >= r(s, a)
    rows_bell = np.zeros((k, nv))
    rows_bell[:, k:] = -lo.gamma * lo.transition.reshape(k, m)
    for s in range(m):
        rows_bell[s * n:(s + 1) * n, k + s] += 1.0
    gap = np.zeros((1, nv))
    gap[0, :k] = hi.reward.ravel()
    gap[0, k:] = -lo.mu
    A = np.vstack([rows_flow, rows_bell, gap])
    b = np.concatenate([hi.mu, lo.reward.ravel(), [epsilon + strict]])
    senses = (Sense.EQ,) * m + (Sense.GE,) * k + (Sense.GE,)
    lower = np.concatenate([np.zeros(k), np.full(m, -np.inf)])
    return LpProblem(c=np.zeros(nv), A=A, b=b, senses=senses, lower=lower, maximize=True)


def check_optimum_parity(pair: GroupPair, epsilon: float) -> OptimumParityResult:
    """Do return-maximising policies of the two groups already satisfy
    epsilon-return parity?

    Decided by two phase-1 feasibility problems (one per direction of the
    gap); either being feasible yields a certificate that parity fails.
    """
    if not (epsilon >= 0):
        raise InvalidParameter(f"epsilon must be nonnegative, got {epsilon}")
    m, n = pair.num_states, pair.num_actions
    k = m * n
    strict = _strict_margin(pair)
    for g in (0, 1):
        hi, lo = pair[g], pair[1 - g]
        out = lp_solve(_alternative_system(hi, lo, epsilon, strict))
        if out.status is LpStatus.OPTIMAL:
            rho = out.x[:k].reshape(m, n)
            V = out.x[k:]
            margin = float(np.sum(rho * hi.reward) - lo.mu @ V)
            if margin > epsilon:
                return OptimumParityResult(False, OptimumGapCertificate(g, rho, V, margin))
    return OptimumParityResult(True)


def optimal_return(mdp: Mdp, maximize: bool = True) -> tuple[float, Policy]:
    """Best (or worst) achievable expected return via the occupancy LP."""
    m, n = mdp.num_states, mdp.num_actions
    sign = 1.0 if maximize else -1.0
    prob = LpProblem(c=sign * mdp.reward.ravel(), A=flow_matrix(mdp), b=mdp.mu,
                     senses=(Sense.EQ,) * m, maximize=True)
    out = lp_solve(prob)
    pi = recover_policy(out.x.reshape(m, n))
    return expected_return(mdp, pi), pi
