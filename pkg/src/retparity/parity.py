"""Exact return disparity and its decomposition bounds.

Two bounds are provided. The state-level bound splits the disparity into a
reward gap, a policy-discrepancy term and an IPM between the discounted
state visitation distributions. The state-action bound replaces the last two
with an IPM between occupancy measures. Both are scaled by ``1 / (1 - gamma)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .divergence import policy_discrepancies, wasserstein1_discrete
from .errors import AssumptionViolated, InvalidParameter, WitnessPreconditionViolated
from .lp import LpProblem, Sense, lp_solve
from .mdp import GroupPair, Mdp, Policy, expected_return, occupancy_measure, state_visitation

ASSUMPTION_TOL = 1e-9
SPAN_TOL = 1e-9


@dataclass(frozen=True)
class SupNormBall:
    """Witness class ``{f : |f|_inf <= R}``; its IPM is ``R * |p - q|_1``."""

    tag = "SupNormBall"

    def ipm(self, p: np.ndarray, q: np.ndarray, radius: float, level: str = "state") -> float:
        return radius * float(np.sum(np.abs(np.ravel(p) - np.ravel(q))))

    def describe(self) -> dict:
        return {"kind": self.tag}


@dataclass(frozen=True)
class Lipschitz:
    """Witness class of ``L``-Lipschitz functions under a ground metric.

    The caller certifies that the rewards are ``L``-Lipschitz with respect to
    ``state_metric`` (state-level bound, policy-averaged rewards) and
    ``pair_metric`` (occupancy bound, rewards on state-action pairs). A bound
    whose metric is missing cannot be evaluated.
    """

    L: float
    state_metric: Optional[np.ndarray] = None
    pair_metric: Optional[np.ndarray] = None

    tag = "Lipschitz"

    def __post_init__(self):
        if not (np.isfinite(self.L) and self.L > 0):
            raise WitnessPreconditionViolated(f"Lipschitz constant must be positive, got {self.L}")

    def ipm(self, p: np.ndarray, q: np.ndarray, radius: float, level: str = "state") -> float:
        metric = self.state_metric if level == "state" else self.pair_metric
        if metric is None:
            raise WitnessPreconditionViolated(f"Lipschitz witness has no {level} metric")
        return self.L * wasserstein1_discrete(np.ravel(p), np.ravel(q), metric)

    def describe(self) -> dict:
        return {"kind": self.tag, "L": self.L}


Witness = Union[SupNormBall, Lipschitz]


def parse_witness(text: str, state_metric=None, pair_metric=None) -> Witness:
    """``"sup"`` or ``"lipschitz:<L>"``."""
    if text == "sup":
        return SupNormBall()
    if text.startswith("lipschitz:"):
        try:
            L = float(text.split(":", 1)[1])
        except ValueError:
            raise WitnessPreconditionViolated(f"bad Lipschitz constant in {text!r}") from None
        return Lipschitz(L, state_metric, pair_metric)
    raise WitnessPreconditionViolated(f"unknown witness {text!r}; use 'sup' or 'lipschitz:L'")


@dataclass
class VisitationBound:
    reward_gap_term: float
    policy_term: float
    visitation_ipm_term: float
    total: float
    policy_expectation_under_pi0: float
    policy_expectation_under_pi1: float


@dataclass
class OccupancyBound:
    reward_gap_term: float
    occupancy_ipm_term: float
    total: float


@dataclass
class DisparityReport:
    delta_ret: float
    return0: float
    return1: float
    bound_visitation: VisitationBound
    bound_occupancy: OccupancyBound
    witness_instantiation: dict

    def to_dict(self) -> dict:
        return asdict(self)

    def flat(self) -> dict:
        """One-row view for CSV output."""
        row = {"delta_ret": self.delta_ret, "return0": self.return0, "return1": self.return1,
               "witness": self.witness_instantiation["kind"]}
        for k, v in asdict(self.bound_visitation).items():
            row[f"visitation_{k}"] = v
        for k, v in asdict(self.bound_occupancy).items():
            row[f"occupancy_{k}"] = v
        return row


def return_disparity(pair: GroupPair, pi0: Policy, pi1: Policy) -> float:
    return abs(expected_return(pair.mdp0, pi0) - expected_return(pair.mdp1, pi1))


def _reward_radius(pair: GroupPair) -> float:
    return max(pair.mdp0.reward_bound, pair.mdp1.reward_bound)


def visitation_bound(pair: GroupPair, pi0: Policy, pi1: Policy,
                   witness: Witness = SupNormBall()) -> VisitationBound:
    scale = 1.0 / (1.0 - pair.gamma)
    R = _reward_radius(pair)
    mu0 = state_visitation(pair.mdp0, pi0)
    mu1 = state_visitation(pair.mdp1, pi1)
    d = policy_discrepancies(pi0, pi1)
    e0, e1 = float(mu0 @ d), float(mu1 @ d)
    reward_gap = scale * float(np.max(np.abs(pair.mdp0.reward - pair.mdp1.reward)))
    policy = scale * R * min(e0, e1)
    ipm = scale * witness.ipm(mu0, mu1, R)
    return VisitationBound(reward_gap, policy, ipm, reward_gap + policy + ipm, e0, e1)


def occupancy_bound(pair: GroupPair, pi0: Policy, pi1: Policy,
                   witness: Witness = SupNormBall()) -> OccupancyBound:
    scale = 1.0 / (1.0 - pair.gamma)
    R = _reward_radius(pair)
    rho0 = occupancy_measure(pair.mdp0, pi0)
    rho1 = occupancy_measure(pair.mdp1, pi1)
    reward_gap = scale * float(np.max(np.abs(pair.mdp0.reward - pair.mdp1.reward)))
    ipm = scale * witness.ipm(rho0, rho1, R, level="pair")
    return OccupancyBound(reward_gap, ipm, reward_gap + ipm)


def disparity_report(pair: GroupPair, pi0: Policy, pi1: Policy,
                     witness: Witness = SupNormBall()) -> DisparityReport:
    r0 = expected_return(pair.mdp0, pi0)
    r1 = expected_return(pair.mdp1, pi1)
    return DisparityReport(
        delta_ret=abs(r0 - r1), return0=r0, return1=r1,
        bound_visitation=visitation_bound(pair, pi0, pi1, witness),
        bound_occupancy=occupancy_bound(pair, pi0, pi1, witness),
        witness_instantiation=witness.describe())


@dataclass
class SpanCheckResult:
    holds: bool
    margin: float
    witness_c: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {"holds": self.holds, "margin": self.margin,
                "witness_c": None if self.witness_c is None else self.witness_c.tolist()}


def check_span_assumptions(pair: GroupPair) -> None:
    """Raise ``AssumptionViolated`` unless rewards and initial distributions
    are shared and rewards depend on the state only."""
    r0, r1 = pair.mdp0.reward, pair.mdp1.reward
    diff = np.abs(r0 - r1)
    if np.any(diff > ASSUMPTION_TOL):
        s, a = np.unravel_index(int(np.argmax(diff)), diff.shape)
        raise AssumptionViolated("shared rewards", f"r0[{s}][{a}] != r1[{s}][{a}]")
    dmu = np.abs(pair.mdp0.mu - pair.mdp1.mu)
    if np.any(dmu > ASSUMPTION_TOL):
        raise AssumptionViolated("shared initial distribution", f"mu0[{int(np.argmax(dmu))}] != mu1")
    spread = r0.max(axis=1) - r0.min(axis=1)
    if np.any(spread > ASSUMPTION_TOL):
        raise AssumptionViolated("state-only rewards",
                                 f"reward row {int(np.argmax(spread))} varies across actions")


def transition_differences(pair: GroupPair) -> np.ndarray:
    """All ``d_ij = T0(.|a_i, s_j) - T1(.|a_i, s_j)``, one per row (ordered by j, then i)."""
    D = pair.mdp0.transition - pair.mdp1.transition
    return D.reshape(-1, pair.num_states)


def check_transition_span(pair: GroupPair) -> SpanCheckResult:
    """Decide whether every direction ``c`` orthogonal to the ones vector has
    some transition difference with ``<c, d_ij> <= 0``.

    Solves ``max t  s.t. <c, d_ij> >= t for all (i, j), sum(c) = 0, |c|_inf <= 1``.
    The condition holds iff ``t* <= 1e-9``; otherwise the maximiser ``c`` is a
    direction strictly positive on every difference vector.
    """
    check_span_assumptions(pair)
    D = transition_differences(pair)
    m = pair.num_states
    k = D.shape[0]
    # variables: c_1..c_m (free, boxed by rows), t (free)
    nv = m + 1
    A = np.zeros((k + 1 + 2 * m, nv))
    b = np.zeros(A.shape[0])
    senses = []
    A[:k, :m] = D
    A[:k, m] = -1.0
    senses += [Sense.GE] * k
    A[k, :m] = 1.0
    senses.append(Sense.EQ)
    for i in range(m):
        A[k + 1 + 2 * i, i] = 1.0
        b[k + 1 + 2 * i] = 1.0
        A[k + 2 + 2 * i, i] = 1.0
        b[k + 2 + 2 * i] = -1.0
        senses += [Sense.LE, Sense.GE]
    c = np.zeros(nv)
    c[m] = 1.0
    out = lp_solve(LpProblem(c=c, A=A, b=b, senses=tuple(senses),
                             lower=np.full(nv, -np.inf), maximize=True))
    t = out.value
    if t <= SPAN_TOL:
        return SpanCheckResult(True, t)
    return SpanCheckResult(False, t, out.x[:m].copy())


def absorbing_gap_pair(c: float, gamma: float, num_actions: int = 2) -> GroupPair:
    """Two absorbing states, reward ``c (1 - gamma)`` in the first; group 0
    starts in the first state and group 1 in the second."""
    if not (np.isfinite(c) and c > 0):
        raise InvalidParameter(f"c must be positive, got {c}")
    if not (0.0 < gamma < 1.0):
        raise InvalidParameter(f"gamma must lie in (0, 1), got {gamma}")
    if num_actions < 1:
        raise InvalidParameter("need at least one action")
    n = num_actions
    T = np.zeros((2, n, 2))
    T[0, :, 0] = 1.0
    T[1, :, 1] = 1.0
    r = np.zeros((2, n))
    r[0, :] = c * (1.0 - gamma)
    return GroupPair(Mdp([1.0, 0.0], T, r, gamma), Mdp([0.0, 1.0], T, r, gamma), 0.5)
