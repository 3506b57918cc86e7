"""Episodic two-group environments.

``TabularEnv`` wraps one group MDP with one-hot state features.
``RecSimEnv`` is a synthetic recommender: a user latent vector drawn from a
group-specific Gaussian rates item embeddings, drifts toward (or away from)
recommended items, and never sees the same item twice in an episode.

Random streams are Philox generators keyed by ``(seed, *keys)`` so every
(group, seed, episode) triple gets an independent, reproducible stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import EpisodeFinished, InvalidParameter, RepeatedItem, ValidationError
from .mdp import GroupPair, Mdp, Policy


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass
class EnvStep:
    state_features: np.ndarray
    action: int
    reward: float
    next_state_features: np.ndarray
    done: bool
    next_valid: Optional[np.ndarray] = None


class TabularEnv:
    """One group MDP as an episodic environment with horizon ``horizon``."""

    def __init__(self, mdp: Mdp, horizon: int):
        if horizon < 1:
            raise InvalidParameter(f"horizon must be >= 1, got {horizon}")
        self.mdp = mdp
        self.horizon = int(horizon)
        self._mu_cum = np.cumsum(mdp.mu)
        self._t_cum = np.cumsum(mdp.transition, axis=2)
        self.state: Optional[int] = None
        self.t = 0
        self._rng: Optional[np.random.Generator] = None

    @property
    def feature_dim(self) -> int:
        return self.mdp.num_states

    @property
    def num_actions(self) -> int:
        return self.mdp.num_actions

    def features(self, s: Optional[int] = None) -> np.ndarray:
        f = np.zeros(self.mdp.num_states)
        f[self.state if s is None else s] = 1.0
        return f

    def valid_actions(self) -> np.ndarray:
        return np.ones(self.num_actions, dtype=bool)

    def _draw(self, cum: np.ndarray) -> int:
        return min(int(np.searchsorted(cum, self._rng.random(), side="right")), cum.size - 1)

    def spawn(self) -> "TabularEnv":
        return TabularEnv(self.mdp, self.horizon)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._rng = rng
        self.state = self._draw(self._mu_cum)
        self.t = 0
        return self.features()

    def step(self, action: int) -> EnvStep:
        if self.state is None or self.t >= self.horizon:
            raise EpisodeFinished("call reset() before stepping")
        if not (0 <= action < self.num_actions):
            raise InvalidParameter(f"action {action} out of range")
        s = self.state
        before = self.features()
        reward = float(self.mdp.reward[s, action])
        self.state = self._draw(self._t_cum[s, action])
        self.t += 1
        return EnvStep(before, int(action), reward, self.features(), self.t >= self.horizon,
                       self.valid_actions())


@dataclass
class RecSimConfig:
    num_items: int = 48
    embed_dim: int = 6
    group_means: tuple = ((0.5, 0.5, 0.0, 0.0, 0.0, 0.0), (0.3, 0.3, 0.0, 0.0, 0.0, 0.0))
    latent_scale: float = 0.15
    noise: float = 0.1
    drift: float = 0.05
    reward_threshold: float = 0.0
    ema_decay: float = 0.5
    horizon: int = 32
    skew: float = 10.0
    skew_group: int = 1
    item_seed: int = 12345
    lam: float = 0.5

    def validate(self) -> "RecSimConfig":
        if self.num_items < self.horizon:
            raise ValidationError("num_items must be >= horizon (items never repeat)")
        if self.embed_dim < 1 or self.horizon < 2:
            raise ValidationError("embed_dim >= 1 and horizon >= 2 required")
        means = np.asarray(self.group_means, dtype=float)
        if means.shape != (2, self.embed_dim):
            raise ValidationError(f"group_means must be 2 x {self.embed_dim}")
        if self.latent_scale < 0 or self.noise < 0 or self.drift < 0:
            raise ValidationError("latent_scale, noise and drift must be nonnegative")
        if not (0.0 <= self.ema_decay < 1.0):
            raise ValidationError("ema_decay must lie in [0, 1)")
        if self.skew < 1.0 or self.skew_group not in (0, 1):
            raise ValidationError("skew must be >= 1 and skew_group 0 or 1")
        if not (0.0 <= self.lam <= 1.0):
            raise ValidationError("lam must lie in [0, 1]")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "RecSimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown recsim keys: {', '.join(unknown)}")
        d = dict(d)
        if "group_means" in d:
            d["group_means"] = tuple(tuple(float(x) for x in row) for row in d["group_means"])
        return cls(**d).validate()


def item_embeddings(cfg: RecSimConfig) -> np.ndarray:
    """Fixed item embeddings: random unit vectors from ``item_seed``."""
    rng = stream(cfg.item_seed, 7)
    E = rng.normal(size=(cfg.num_items, cfg.embed_dim))
    return E / np.linalg.norm(E, axis=1, keepdims=True)


class RecSimEnv:
    """Synthetic recommender for one group.

    Features: ``[EMA of recommended item embeddings (d), positive count / H,
    negative count / H, last reward, t / H]``.
    """

    def __init__(self, cfg: RecSimConfig, group: int, items: Optional[np.ndarray] = None):
        cfg.validate()
        self.cfg = cfg
        self.group = group
        self.items = item_embeddings(cfg) if items is None else items
        self.mean = np.asarray(cfg.group_means[group], dtype=float)
        means = np.asarray(cfg.group_means, dtype=float)
        population = cfg.lam * means[0] + (1.0 - cfg.lam) * means[1]
        # cold start: most popular item under the population mean taste
        self.popular = int(np.argmax(self.items @ population))
        self.horizon = cfg.horizon
        self.user: Optional[np.ndarray] = None
        self.t = 0
        self._rng: Optional[np.random.Generator] = None

    @property
    def feature_dim(self) -> int:
        return self.cfg.embed_dim + 4

    @property
    def num_actions(self) -> int:
        return self.cfg.num_items

    def features(self) -> np.ndarray:
        H = self.horizon
        return np.concatenate([self.ema, [self.pos / H, self.neg / H, self.last, self.t / H]])

    def valid_actions(self) -> np.ndarray:
        return ~self.used

    def spawn(self) -> "RecSimEnv":
        return RecSimEnv(self.cfg, self.group, self.items)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._rng = rng
        d = self.cfg.embed_dim
        self.user = self.mean + self.cfg.latent_scale * rng.normal(size=d)
        self.ema = np.zeros(d)
        self.pos = self.neg = 0
        self.last = 0.0
        self.t = 0
        self.used = np.zeros(self.cfg.num_items, dtype=bool)
        self._apply(self.popular)
        return self.features()

    def _apply(self, item: int) -> float:
        e = self.items[item]
        noise = self.cfg.noise * self._rng.normal()
        r = float(np.clip(self.user @ e + noise, -1.0, 1.0))
        self.user = self.user + self.cfg.drift * r * e
        b = self.cfg.ema_decay
        self.ema = b * self.ema + (1.0 - b) * e
        if r > self.cfg.reward_threshold:
            self.pos += 1
        else:
            self.neg += 1
        self.last = r
        self.used[item] = True
        self.t += 1
        return r

    def step(self, action: int) -> EnvStep:
        if self.user is None or self.t >= self.horizon:
            raise EpisodeFinished("episode is over; call reset()")
        if not (0 <= action < self.cfg.num_items):
            raise InvalidParameter(f"item {action} out of range")
        if self.used[action]:
            raise RepeatedItem(f"item {action} was already recommended this episode")
        before = self.features()
        r = self._apply(int(action))
        return EnvStep(before, int(action), r, self.features(), self.t >= self.horizon,
                       self.valid_actions().copy())


Env = Union[TabularEnv, RecSimEnv]


@dataclass
class EnvPair:
    """Per-group environments plus the sampling skew between groups."""

    envs: tuple
    lam: float = 0.5
    skew: float = 1.0
    skew_group: int = 1
    discount: float = 0.9

    def __getitem__(self, g: int):
        return self.envs[g]

    @property
    def feature_dim(self) -> int:
        return self.envs[0].feature_dim

    @property
    def num_actions(self) -> int:
        return self.envs[0].num_actions

    @property
    def horizon(self) -> int:
        return self.envs[0].horizon

    def sample_share(self, g: int) -> float:
        """Fraction of the per-iteration sampling budget given to group ``g``."""
        return 1.0 / self.skew if g == self.skew_group else 1.0


def tabular_pair(pair: GroupPair, horizon: int) -> EnvPair:
    return EnvPair((TabularEnv(pair.mdp0, horizon), TabularEnv(pair.mdp1, horizon)),
                   lam=pair.lam, discount=pair.gamma)


def recsim_pair(cfg: RecSimConfig, discount: float = 0.9) -> EnvPair:
    items = item_embeddings(cfg.validate())
    return EnvPair((RecSimEnv(cfg, 0, items), RecSimEnv(cfg, 1, items)),
                   lam=cfg.lam, skew=cfg.skew, skew_group=cfg.skew_group, discount=discount)


def empirical_visitation(mdp: Mdp, pi: Policy, num_samples: int, seed: int) -> np.ndarray:
    """Monte-Carlo estimate of the discounted state visitation distribution.

    Each sample restarts from ``mu`` and continues with probability
    ``gamma`` per step; the state where the walk stops is an exact draw from
    the visitation distribution. Walks are simulated in parallel.
    """
    if num_samples < 1:
        raise InvalidParameter("num_samples must be >= 1")
    rng = stream(seed, 0xE5)
    m, n = pi.shape
    if (m, n) != (mdp.num_states, mdp.num_actions):
        raise InvalidParameter("policy does not match the MDP")
    pcum = np.cumsum(pi.pi, axis=1)
    tcum = np.cumsum(mdp.transition, axis=2)
    mucum = np.cumsum(mdp.mu)
    state = np.minimum(np.searchsorted(mucum, rng.random(num_samples), side="right"), m - 1)
    counts = np.zeros(m)
    active = np.arange(num_samples)
    while active.size:
        stop = rng.random(active.size) >= mdp.gamma
        np.add.at(counts, state[active[stop]], 1.0)
        active = active[~stop]
        if not active.size:
            break
        s = state[active]
        u = rng.random(active.size)
        a = np.minimum((u[:, None] >= pcum[s]).sum(axis=1), n - 1)
        u = rng.random(active.size)
        state[active] = np.minimum((u[:, None] >= tcum[s, a]).sum(axis=1), m - 1)
    return counts / num_samples


def discounted_return_samples(mdp: Mdp, pi: Policy, episodes: int, seed: int,
                              tol: float = 1e-6) -> np.ndarray:
    """Discounted returns of ``episodes`` sampled trajectories, truncated once
    ``gamma^t < tol``."""
    rng = stream(seed, 0xD1)
    m, n = pi.shape
    H = int(np.ceil(np.log(tol) / np.log(mdp.gamma)))
    pcum = np.cumsum(pi.pi, axis=1)
    tcum = np.cumsum(mdp.transition, axis=2)
    state = np.minimum(np.searchsorted(np.cumsum(mdp.mu), rng.random(episodes), side="right"), m - 1)
    total = np.zeros(episodes)
    disc = 1.0
    for _ in range(H):
        a = np.minimum((rng.random(episodes)[:, None] >= pcum[state]).sum(axis=1), n - 1)
        total += disc * mdp.reward[state, a]
        state = np.minimum((rng.random(episodes)[:, None] >= tcum[state, a]).sum(axis=1), m - 1)
        disc *= mdp.gamma
    return total
