"""Double-DQN over two group environments with feature alignment.

One Q-network (and its target copy) is shared by both groups; each group
has its own feature extractor in front of it. Each training iteration runs
three phases in order:

1. environment steps for both groups into per-group replay buffers,
2. TD updates of Q and both extractors on a pooled mini-batch,
3. alignment updates that pull the groups' extractor outputs together,
   either by descending the unbiased squared MMD or a clipped-critic
   Wasserstein estimate. Only the extractor of the group with the higher
   recent return moves during an alignment step.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from typing import Optional

import numpy as np

from .divergence import KernelSpec, mmd2_unbiased_grad
from .envs import EnvPair, stream
from .errors import BatchTooSmall, EmptyBatch, InvalidParameter, NoValidActions, ValidationError
from .nn import AdamState, Mlp, adam_step, check_finite, clip_weights, soft_update

LOG_COLUMNS = ("iteration", "return0", "return1", "overall_return", "gap",
               "alignment_loss", "epsilon", "seed")


@dataclass
class TrainConfig:
    iterations: int = 100
    env_steps: int = 64
    update_steps: int = 8
    update_batch: int = 256
    buffer_size: int = 20000
    hidden: int = 64
    feature_dim: int = 16
    lr: float = 1e-3
    q_weight_decay: float = 1e-6
    tau: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay: int = 160
    ratio: tuple = (1, 0)
    alignment: str = "mmd"
    bandwidths: tuple = (0.001, 0.005, 0.01, 0.05, 0.1, 1.0, 5.0, 10.0)
    align_batch: int = 64
    align_lr: float = 1e-3
    critic_steps: int = 5
    critic_clip: float = 0.1
    critic_hidden: int = 32
    eval_every: int = 1
    eval_episodes: int = 32
    return_mode: str = "undiscounted"
    return_window: int = 20
    seed: int = 0

    def validate(self) -> "TrainConfig":
        ints = ("iterations", "env_steps", "update_batch", "buffer_size", "hidden",
                "feature_dim", "align_batch", "critic_hidden", "eval_every", "eval_episodes",
                "return_window")
        for name in ints:
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        for name in ("update_steps", "critic_steps", "eps_decay"):
            if int(getattr(self, name)) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.update_batch < 2:
            raise ValidationError("update_batch must be >= 2")
        for name in ("lr", "align_lr", "critic_clip"):
            if not (getattr(self, name) > 0):
                raise ValidationError(f"{name} must be positive")
        if self.q_weight_decay < 0:
            raise ValidationError("q_weight_decay must be nonnegative")
        if not (0.0 <= self.tau <= 1.0):
            raise ValidationError("tau must lie in [0, 1]")
        if not (0.0 <= self.eps_end <= self.eps_start <= 1.0):
            raise ValidationError("need 0 <= eps_end <= eps_start <= 1")
        x, y = self.ratio
        if x < 0 or y < 0 or (x == 0 and y > 0):
            raise ValidationError(f"ratio must be X:Y with X >= 1 or 0:0, got {x}:{y}")
        if self.alignment not in ("mmd", "wasserstein"):
            raise ValidationError("alignment must be 'mmd' or 'wasserstein'")
        if self.alignment == "mmd" and self.align_batch < 2:
            raise ValidationError("MMD alignment needs align_batch >= 2")
        if self.return_mode not in ("undiscounted", "discounted"):
            raise ValidationError("return_mode must be 'undiscounted' or 'discounted'")
        KernelSpec(tuple(self.bandwidths))
        return self

    @classmethod
    def from_dict(cls, d: dict, base: Optional["TrainConfig"] = None) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown trainer keys: {', '.join(unknown)}")
        d = dict(d)
        if "ratio" in d:
            d["ratio"] = parse_ratio(d["ratio"])
        if "bandwidths" in d:
            d["bandwidths"] = tuple(float(b) for b in d["bandwidths"])
        return replace(base or cls(), **d).validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratio"] = f"{self.ratio[0]}:{self.ratio[1]}"
        d["bandwidths"] = list(self.bandwidths)
        return d


PROFILES = {
    "desk": TrainConfig(),
    "full": TrainConfig(iterations=400, env_steps=1000, update_batch=10000,
                         buffer_size=200000, hidden=128),
    "tiny": TrainConfig(iterations=5, env_steps=16, update_steps=2, update_batch=32,
                        buffer_size=1000, hidden=16, feature_dim=8, align_batch=16,
                        eval_episodes=2, eps_decay=4),
}


def parse_ratio(value) -> tuple:
    if isinstance(value, str):
        parts = value.split(":")
        if len(parts) != 2:
            raise ValidationError(f"ratio must look like 'X:Y', got {value!r}")
        try:
            return (int(parts[0]), int(parts[1]))
        except ValueError:
            raise ValidationError(f"ratio must look like 'X:Y', got {value!r}") from None
    x, y = value
    return (int(x), int(y))


def epsilon_at(cfg: TrainConfig, iteration: int) -> float:
    """Linear decay from ``eps_start`` to ``eps_end`` over ``eps_decay`` iterations."""
    if cfg.eps_decay == 0:
        return cfg.eps_end
    frac = min(max(iteration, 0) / cfg.eps_decay, 1.0)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def masked_argmax(q: np.ndarray, valid: Optional[np.ndarray]) -> int:
    if valid is None:
        return int(np.argmax(q))
    if not np.any(valid):
        raise NoValidActions("every action is masked")
    return int(np.argmax(np.where(valid, q, -np.inf)))


class ReplayBuffer:
    """Fixed-capacity ring of transitions for one group."""

    def __init__(self, capacity: int, state_dim: int, num_actions: int):
        if capacity < 1:
            raise InvalidParameter("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.valid2 = np.ones((capacity, num_actions), dtype=bool)
        self.size = 0
        self.pos = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, done, valid2=None) -> None:
        i = self.pos
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = done
        self.valid2[i] = True if valid2 is None else valid2
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise EmptyBatch("replay buffer is empty")
        return rng.choice(self.size, size=min(batch, self.size), replace=False)

    def batch(self, idx: np.ndarray) -> dict:
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx], "s2": self.s2[idx],
                "done": self.done[idx], "valid2": self.valid2[idx]}

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.s, self.a, self.r, self.s2, self.done, self.valid2):
            h.update(np.ascontiguousarray(arr[:self.size]).tobytes())
        return h.hexdigest()


def params_digest(net: Mlp) -> str:
    return hashlib.sha256(net.flat().tobytes()).hexdigest()


class AlignTrainer:
    def __init__(self, state_dim: int, num_actions: int, cfg: TrainConfig, gamma: float):
        self.cfg = cfg.validate()
        self.gamma = float(gamma)
        self.state_dim = state_dim
        self.num_actions = num_actions
        init = stream(cfg.seed, 0xA1)
        f = cfg.feature_dim
        self.extractors = [Mlp([state_dim, cfg.hidden, f], init) for _ in range(2)]
        self.q = Mlp([f, cfg.hidden, num_actions], init)
        self.q_target = self.q.copy()
        self.critic = Mlp([f, cfg.critic_hidden, 1], init) if cfg.alignment == "wasserstein" else None
        if self.critic is not None:
            clip_weights(self.critic, cfg.critic_clip)
        self.q_opt = AdamState.for_params(self.q.params(), lr=cfg.lr, weight_decay=cfg.q_weight_decay)
        self.ext_opt = [AdamState.for_params(e.params(), lr=cfg.lr) for e in self.extractors]
        self.align_opt = [AdamState.for_params(e.params(), lr=cfg.align_lr) for e in self.extractors]
        self.critic_opt = (AdamState.for_params(self.critic.params(), lr=cfg.align_lr)
                           if self.critic is not None else None)
        self.kernel = KernelSpec(tuple(cfg.bandwidths))
        self.buffers = [ReplayBuffer(cfg.buffer_size, state_dim, num_actions) for _ in range(2)]
        self.sample_rng = stream(cfg.seed, 0xB2)
        self.recent = [deque(maxlen=cfg.return_window) for _ in range(2)]
        self.iteration = 0

    # acting -----------------------------------------------------------------

    def q_values(self, features, group: int) -> np.ndarray:
        return self.q(self.extractors[group](features))

    def act_epsilon_greedy(self, features, group: int, iteration: int,
                           rng: np.random.Generator, valid: Optional[np.ndarray] = None,
                           epsilon: Optional[float] = None) -> int:
        if group not in (0, 1):
            raise InvalidParameter(f"group must be 0 or 1, got {group}")
        eps = epsilon_at(self.cfg, iteration) if epsilon is None else epsilon
        if valid is not None and not np.any(valid):
            raise NoValidActions("every action is masked")
        if rng.random() < eps:
            choices = np.flatnonzero(valid) if valid is not None else np.arange(self.num_actions)
            return int(choices[rng.integers(choices.size)])
        return masked_argmax(self.q_values(features, group), valid)

    # learning ---------------------------------------------------------------

    def td_targets(self, batch: dict, group: int) -> np.ndarray:
        """``r + gamma * Q'(f(s'), argmax_a Q(f(s'), a))``; just ``r`` at terminal steps."""
        h2 = self.extractors[group](batch["s2"])
        q_online = np.where(batch["valid2"], self.q(h2), -np.inf)
        a_star = np.argmax(q_online, axis=1)
        q_next = self.q_target(h2)[np.arange(a_star.size), a_star]
        # a fully masked next state only occurs at the terminal step
        q_next = np.where(batch["done"] | ~batch["valid2"].any(axis=1), 0.0, q_next)
        return batch["r"] + self.gamma * q_next

    def td_update(self, batch0: Optional[dict], batch1: Optional[dict]) -> float:
        batches = [(g, b) for g, b in ((0, batch0), (1, batch1)) if b is not None and len(b["a"])]
        if not batches:
            raise EmptyBatch("td_update needs at least one nonempty batch")
        total = sum(len(b["a"]) for _, b in batches)
        loss = 0.0
        q_grads = [np.zeros_like(p) for p in self.q.params()]
        ext_grads = {}
        for g, b in batches:
            y = self.td_targets(b, g)
            h, tape_f = self.extractors[g].forward(b["s"])
            q, tape_q = self.q.forward(h)
            idx = np.arange(len(b["a"]))
            err = q[idx, b["a"]] - y
            loss += float(np.sum(err ** 2))
            dq = np.zeros_like(q)
            dq[idx, b["a"]] = 2.0 * err / total
            gq, dh = self.q.backward(tape_q, dq)
            for acc, gi in zip(q_grads, gq):
                acc += gi
            ext_grads[g] = self.extractors[g].backward(tape_f, dh)[0]
        adam_step(self.q_opt, self.q.params(), q_grads)
        for g, grads in ext_grads.items():
            adam_step(self.ext_opt[g], self.extractors[g].params(), grads)
        soft_update(self.q_target, self.q, self.cfg.tau)
        return loss / total

    def leader(self) -> int:
        """Group with the higher mean of recent training returns (ties: group 0)."""
        m = [np.mean(r) if r else -np.inf for r in self.recent]
        return 0 if m[0] >= m[1] else 1

    def alignment_update(self, s0: np.ndarray, s1: np.ndarray, group: Optional[int] = None) -> float:
        """One alignment step on state batches ``s0``/``s1``; only ``group``'s
        extractor (default: the current leader) is changed."""
        g = self.leader() if group is None else group
        if self.cfg.alignment == "mmd":
            if len(s0) < 2 or len(s1) < 2:
                raise BatchTooSmall("MMD alignment needs at least 2 states per group")
        elif len(s0) < 1 or len(s1) < 1:
            raise BatchTooSmall("critic alignment needs at least 1 state per group")
        h0, t0 = self.extractors[0].forward(s0)
        h1, t1 = self.extractors[1].forward(s1)
        tapes = (t0, t1)
        if self.cfg.alignment == "mmd":
            loss, g0, g1 = mmd2_unbiased_grad(h0, h1, self.kernel)
            dh = (g0, g1)[g]
        else:
            loss, dh = self._critic_round(h0, h1, g)
        grads = self.extractors[g].backward(tapes[g], dh)[0]
        adam_step(self.align_opt[g], self.extractors[g].params(), grads)
        return float(loss)

    def critic_estimate(self, h0: np.ndarray, h1: np.ndarray) -> float:
        return float(np.mean(self.critic(h0)) - np.mean(self.critic(h1)))

    def _critic_round(self, h0, h1, g):
        n0, n1 = len(h0), len(h1)
        for _ in range(self.cfg.critic_steps):
            o0, t0 = self.critic.forward(h0)
            o1, t1 = self.critic.forward(h1)
            # ascend mean f(h0) - mean f(h1): descend its negative
            ga = self.critic.backward(t0, np.full((n0, 1), -1.0 / n0))[0]
            gb = self.critic.backward(t1, np.full((n1, 1), 1.0 / n1))[0]
            adam_step(self.critic_opt, self.critic.params(), [a + b for a, b in zip(ga, gb)])
            clip_weights(self.critic, self.cfg.critic_clip)
        h = (h0, h1)[g]
        out, tape = self.critic.forward(h)
        sign = 1.0 if g == 0 else -1.0
        dh = self.critic.backward(tape, np.full((len(h), 1), sign / len(h)))[1]
        return self.critic_estimate(h0, h1), dh

    # evaluation -------------------------------------------------------------

    def evaluate(self, envs: EnvPair, episodes: int, seed: int, tag: int = 0,
                 sample_features: int = 0) -> dict:
        """Greedy rollouts of ``episodes`` episodes per group, run in lockstep."""
        discounted = self.cfg.return_mode == "discounted"
        out = {}
        for g in (0, 1):
            runs = [envs[g].spawn() for _ in range(episodes)]
            states = np.array([e.reset(stream(seed, g, 1, tag, k)) for k, e in enumerate(runs)])
            totals = np.zeros(episodes)
            disc = 1.0
            visited = [states]
            for _ in range(envs.horizon):
                live = [k for k, e in enumerate(runs) if e.t < e.horizon]
                if not live:
                    break
                q = self.q_values(states[live], g)
                for row, k in enumerate(live):
                    a = masked_argmax(q[row], runs[k].valid_actions())
                    step = runs[k].step(a)
                    totals[k] += disc * step.reward
                    states[k] = step.next_state_features
                visited.append(states[live].copy())
                if discounted:
                    disc *= envs.discount
            out[f"return{g}"] = float(np.mean(totals))
            out[f"returns{g}"] = totals
            if sample_features:
                pool = np.vstack(visited)
                idx = stream(seed, g, 2, tag).choice(len(pool), size=min(sample_features, len(pool)),
                                                     replace=False)
                out[f"features{g}"] = self.extractors[g](pool[np.sort(idx)])
        out["gap"] = abs(out["return0"] - out["return1"])
        out["overall_return"] = envs.lam * out["return0"] + (1.0 - envs.lam) * out["return1"]
        return out


class _Actor:
    """Keeps one ongoing training episode per group across iterations."""

    def __init__(self, env, group: int, seed: int):
        self.env = env
        self.group = group
        self.seed = seed
        self.episode = -1
        self.state = None
        self.total = 0.0
        self.disc = 1.0

    def ensure(self):
        if self.state is None:
            self.episode += 1
            self.state = self.env.reset(stream(self.seed, self.group, 0, self.episode))
            self.act_rng = stream(self.seed, self.group, 3, self.episode)
            self.total, self.disc = 0.0, 1.0


def train(trainer: AlignTrainer, envs: EnvPair, log=None, progress=None) -> list[dict]:
    """Run the configured number of iterations; returns the evaluation rows."""
    cfg = trainer.cfg
    x, y = cfg.ratio
    align_per_update = Fraction(y, x) if x else Fraction(0)
    align_credit = Fraction(0)
    actors = [_Actor(envs[g], g, cfg.seed) for g in (0, 1)]
    step_credit = [0.0, 0.0]
    discounted = cfg.return_mode == "discounted"
    rows = []
    last_align = float("nan")
    for it in range(cfg.iterations):
        trainer.iteration = it
        eps = epsilon_at(cfg, it)
        # 1. environment steps
        for g, actor in enumerate(actors):
            step_credit[g] += cfg.env_steps * envs.sample_share(g)
            n = int(step_credit[g])
            step_credit[g] -= n
            for _ in range(n):
                actor.ensure()
                env = actor.env
                a = trainer.act_epsilon_greedy(actor.state, g, it, actor.act_rng,
                                               env.valid_actions(), epsilon=eps)
                st = env.step(a)
                trainer.buffers[g].add(st.state_features, a, st.reward, st.next_state_features,
                                       st.done, st.next_valid)
                actor.total += actor.disc * st.reward
                if discounted:
                    actor.disc *= envs.discount
                actor.state = st.next_state_features
                if st.done:
                    trainer.recent[g].append(actor.total)
                    actor.state = None
        # 2. model updates on a pooled batch, split in proportion to buffer sizes
        sizes = [len(b) for b in trainer.buffers]
        for _ in range(cfg.update_steps):
            n0 = int(round(cfg.update_batch * sizes[0] / sum(sizes)))
            counts = (max(min(n0, sizes[0]), 1 if sizes[0] else 0),
                      max(min(cfg.update_batch - n0, sizes[1]), 1 if sizes[1] else 0))
            batches = [trainer.buffers[g].batch(trainer.buffers[g].sample_indices(counts[g], trainer.sample_rng))
                       if counts[g] else None for g in (0, 1)]
            trainer.td_update(*batches)
        # 3. alignment updates at the configured ratio
        align_credit += align_per_update * cfg.update_steps
        n_align = int(align_credit)
        align_credit -= n_align
        need = 2 if cfg.alignment == "mmd" else 1
        if min(sizes) < need:
            n_align = 0
        for _ in range(n_align):
            s = [trainer.buffers[g].s[trainer.buffers[g].sample_indices(cfg.align_batch, trainer.sample_rng)]
                 for g in (0, 1)]
            last_align = trainer.alignment_update(s[0], s[1])
        for net in trainer.extractors + [trainer.q]:
            check_finite(net)
        if (it + 1) % cfg.eval_every == 0 or it == cfg.iterations - 1:
            ev = trainer.evaluate(envs, cfg.eval_episodes, cfg.seed, tag=it)
            row = {"iteration": it, "return0": ev["return0"], "return1": ev["return1"],
                   "overall_return": ev["overall_return"], "gap": ev["gap"],
                   "alignment_loss": last_align, "epsilon": eps, "seed": cfg.seed}
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def make_trainer(envs: EnvPair, cfg: TrainConfig) -> AlignTrainer:
    return AlignTrainer(envs.feature_dim, envs.num_actions, cfg, envs.discount)
