"""Finite discounted MDPs and their exact policy quantities.

Transition tensors use the layout ``T[s, a, s']``. Every quantity here is
computed by a linear solve, never by truncating a series.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, ValidationError
from .linalg import lu_solve

STOCH_TOL = 1e-9


def _check_distribution(v: np.ndarray, what: str) -> None:
    if np.any(v < -STOCH_TOL):
        i = int(np.argmin(v))
        raise ValidationError(f"{what}: negative entry {v.flat[i]:.3g} at index {i}")
    total = v.sum()
    if abs(total - 1.0) > STOCH_TOL:
        raise ValidationError(f"{what}: sums to {total:.12g}, expected 1")


@dataclass(frozen=True)
class Mdp:
    """Finite MDP ``(S, A, mu, T, r, gamma)`` validated on construction."""

    mu: np.ndarray
    transition: np.ndarray
    reward: np.ndarray
    gamma: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        T = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        if T.ndim != 3 or T.shape[0] != T.shape[2]:
            raise DimensionMismatch(f"transition must have shape (m, n, m), got {T.shape}")
        m, n, _ = T.shape
        if mu.shape != (m,):
            raise DimensionMismatch(f"mu must have length {m}, got shape {mu.shape}")
        if r.shape != (m, n):
            raise DimensionMismatch(f"reward must have shape ({m}, {n}), got {r.shape}")
        if not (0.0 < float(self.gamma) < 1.0):
            raise ValidationError(f"gamma must lie in (0, 1), got {self.gamma}")
        for arr, name in ((mu, "mu"), (T, "transition"), (r, "reward")):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains NaN or Inf")
        _check_distribution(mu, "mu")
        if np.any(T < -STOCH_TOL):
            s, a, s2 = np.unravel_index(int(np.argmin(T)), T.shape)
            raise ValidationError(f"transition[{s}][{a}][{s2}] is negative ({T[s, a, s2]:.3g})")
        sums = T.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > STOCH_TOL)
        if bad.size:
            s, a = bad[0]
            raise ValidationError(
                f"transition row (s={s}, a={a}) sums to {sums[s, a]:.12g}, expected 1")
        for arr in (mu, T, r):
            arr.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def reward_bound(self) -> float:
        """``R = max |r(s, a)|``."""
        return float(np.max(np.abs(self.reward)))

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "mu": self.mu.tolist(),
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mdp":
        required = ("num_states", "num_actions", "gamma", "mu", "transition", "reward")
        missing = [k for k in required if k not in d]
        if missing:
            raise ValidationError(f"MDP document missing fields: {', '.join(missing)}")
        unknown = sorted(set(d) - set(required))
        if unknown:
            raise ValidationError(f"MDP document has unknown fields: {', '.join(unknown)}")
        mdp = cls(mu=d["mu"], transition=d["transition"], reward=d["reward"], gamma=d["gamma"])
        if mdp.num_states != d["num_states"] or mdp.num_actions != d["num_actions"]:
            raise ValidationError(
                f"declared size ({d['num_states']}, {d['num_actions']}) does not match "
                f"arrays ({mdp.num_states}, {mdp.num_actions})")
        return mdp


@dataclass(frozen=True)
class Policy:
    """Stochastic policy ``pi[s, a] = pi(a | s)``."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float)
        if pi.ndim != 2:
            raise DimensionMismatch(f"policy must be an m x n matrix, got shape {pi.shape}")
        if not np.all(np.isfinite(pi)):
            raise ValidationError("policy contains NaN or Inf")
        if np.any(pi < -STOCH_TOL):
            s, a = np.unravel_index(int(np.argmin(pi)), pi.shape)
            raise ValidationError(f"policy[{s}][{a}] is negative ({pi[s, a]:.3g})")
        sums = pi.sum(axis=1)
        bad = np.nonzero(np.abs(sums - 1.0) > STOCH_TOL)[0]
        if bad.size:
            raise ValidationError(f"policy row {bad[0]} sums to {sums[bad[0]]:.12g}, expected 1")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pi.shape

    @classmethod
    def uniform(cls, m: int, n: int) -> "Policy":
        return cls(np.full((m, n), 1.0 / n))

    @classmethod
    def deterministic(cls, actions, n: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        pi = np.zeros((actions.size, n))
        pi[np.arange(actions.size), actions] = 1.0
        return cls(pi)

    @classmethod
    def random(cls, m: int, n: int, rng: np.random.Generator) -> "Policy":
        return cls(rng.dirichlet(np.ones(n), size=m))


@dataclass(frozen=True)
class GroupPair:
    """Two group MDPs on shared state/action spaces and discount."""

    mdp0: Mdp
    mdp1: Mdp
    lam: float = 0.5

    def __post_init__(self):
        a, b = self.mdp0, self.mdp1
        if (a.num_states, a.num_actions) != (b.num_states, b.num_actions):
            raise ValidationError(
                f"group MDPs differ in size: {(a.num_states, a.num_actions)} vs "
                f"{(b.num_states, b.num_actions)}")
        if a.gamma != b.gamma:
            raise ValidationError(f"group MDPs differ in gamma: {a.gamma} vs {b.gamma}")
        if not (0.0 <= float(self.lam) <= 1.0):
            raise ValidationError(f"lambda must lie in [0, 1], got {self.lam}")
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def gamma(self) -> float:
        return self.mdp0.gamma

    @property
    def num_states(self) -> int:
        return self.mdp0.num_states

    @property
    def num_actions(self) -> int:
        return self.mdp0.num_actions

    def __getitem__(self, g: int) -> Mdp:
        if g == 0:
            return self.mdp0
        if g == 1:
            return self.mdp1
        raise IndexError(f"group must be 0 or 1, got {g}")


def _check_policy(mdp: Mdp, pi: Policy) -> None:
    if pi.shape != (mdp.num_states, mdp.num_actions):
        raise DimensionMismatch(
            f"policy shape {pi.shape} does not match MDP ({mdp.num_states}, {mdp.num_actions})")


def induced_transition(mdp: Mdp, pi: Policy) -> np.ndarray:
    """``P[s, s'] = sum_a pi(a|s) T(s'|s, a)``."""
    _check_policy(mdp, pi)
    return np.einsum("sa,sat->st", pi.pi, mdp.transition)


def policy_reward(mdp: Mdp, pi: Policy) -> np.ndarray:
    _check_policy(mdp, pi)
    return np.sum(pi.pi * mdp.reward, axis=1)


def value_function(mdp: Mdp, pi: Policy) -> np.ndarray:
    """Solve ``(I - gamma P) v = R`` for the state values of ``pi``."""
    P = induced_transition(mdp, pi)
    m = mdp.num_states
    return lu_solve(np.eye(m) - mdp.gamma * P, policy_reward(mdp, pi))


def state_visitation(mdp: Mdp, pi: Policy) -> np.ndarray:
    """Discounted state visitation ``(1 - gamma) sum_t (gamma P^T)^t mu``."""
    P = induced_transition(mdp, pi)
    m = mdp.num_states
    x = lu_solve(np.eye(m) - mdp.gamma * P.T, (1.0 - mdp.gamma) * mdp.mu)
    # clear round-off negatives so callers always see a distribution
    return np.clip(x, 0.0, None)


def occupancy_measure(mdp: Mdp, pi: Policy) -> np.ndarray:
    return state_visitation(mdp, pi)[:, None] * pi.pi


def expected_return(mdp: Mdp, pi: Policy) -> float:
    """``eta = mu . v``; the occupancy form is available via ``return_from_occupancy``."""
    return float(mdp.mu @ value_function(mdp, pi))


def return_from_occupancy(mdp: Mdp, rho: np.ndarray) -> float:
    return float(np.sum(mdp.reward * rho) / (1.0 - mdp.gamma))


def q_function(mdp: Mdp, pi: Policy) -> np.ndarray:
    v = value_function(mdp, pi)
    return mdp.reward + mdp.gamma * mdp.transition @ v


def bellman_residual(mdp: Mdp, pi: Policy, v: np.ndarray) -> float:
    P = induced_transition(mdp, pi)
    return float(np.max(np.abs(v - (policy_reward(mdp, pi) + mdp.gamma * P @ v))))


def random_mdp(m: int, n: int, gamma: float, rng: np.random.Generator,
               reward_scale: float = 1.0, sparsity: float = 0.0) -> Mdp:
    """Random MDP with Dirichlet transitions and uniform rewards in ``[-scale, scale]``.

    ``sparsity`` zeroes that fraction of transition entries (at least one
    successor per row survives).
    """
    T = rng.dirichlet(np.ones(m), size=(m, n))
    if sparsity > 0:
        mask = rng.random(T.shape) >= sparsity
        keep = rng.integers(0, m, size=(m, n))
        mask[np.arange(m)[:, None], np.arange(n)[None, :], keep] = True
        T = T * mask
        T /= T.sum(axis=2, keepdims=True)
    return Mdp(mu=rng.dirichlet(np.ones(m)), transition=T,
               reward=rng.uniform(-reward_scale, reward_scale, size=(m, n)), gamma=gamma)


MdpSource = Union[str, Path, dict]


def load_mdp(source: MdpSource) -> Mdp:
    if isinstance(source, dict):
        return Mdp.from_dict(source)
    from .io import read_json
    return Mdp.from_dict(read_json(source))


def save_mdp(mdp: Mdp, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=2) + "\n", encoding="utf-8")


def check_gamma(gamma: float) -> float:
    if not (0.0 < gamma < 1.0):
        raise InvalidParameter(f"gamma must lie in (0, 1), got {gamma}")
    return float(gamma)
