"""Small dense networks with hand-written reverse-mode gradients.

An ``Mlp`` is a stack of affine layers with ReLU between them and a linear
output. ``forward`` returns a ``Tape`` that holds what one ``backward`` pass
needs; batches are row-major ``(N, d)`` arrays (a single vector also works).

Checkpoint layout (``save_checkpoint``), all little-endian::

    8 bytes   magic  b"RPYMLP01"
    int64     number of layer sizes L
    int64[L]  layer sizes (input, hidden..., output)
    float64[] parameters, layer by layer: W (in x out, row-major) then b (out)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (DimensionMismatch, InvalidParameter, NonFiniteValue, ShapeMismatch,
                     TapeReused)

_MAGIC = b"RPYMLP01"


class Tape:
    """Forward intermediates for one backward pass."""

    def __init__(self, inputs: list[np.ndarray], pre: list[np.ndarray], squeeze: bool):
        self.inputs = inputs
        self.pre = pre
        self.squeeze = squeeze
        self.used = False


class Mlp:
    def __init__(self, sizes: Sequence[int], rng: Optional[np.random.Generator] = None,
                 zero: bool = False):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise InvalidParameter(f"layer sizes must be >= 1 and at least two, got {sizes}")
        self.sizes = sizes
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = rng if rng is not None else np.random.default_rng(0)
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            if zero:
                self.weights.append(np.zeros((fan_in, fan_out)))
                self.biases.append(np.zeros(fan_out))
            else:
                self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def set_params(self, values: Sequence[np.ndarray]) -> None:
        mine = self.params()
        if len(values) != len(mine) or any(v.shape != p.shape for v, p in zip(values, mine)):
            raise ShapeMismatch("parameter list does not match network layout")
        for p, v in zip(mine, values):
            p[...] = v

    def copy(self) -> "Mlp":
        net = Mlp.__new__(Mlp)
        net.sizes = list(self.sizes)
        net.weights = [W.copy() for W in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def forward(self, x) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise DimensionMismatch(f"expected input dim {self.in_dim}, got shape {x.shape}")
        inputs, pre = [], []
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ W + b
            pre.append(z)
            h = z if i == last else np.maximum(z, 0.0)
        return (h[0] if squeeze else h), Tape(inputs, pre, squeeze)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, tape: Tape, dy) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given ``dy = dLoss/dy``.

        Returns parameter gradients (same order as ``params()``) and the
        gradient with respect to the network input.
        """
        if tape.used:
            raise TapeReused("a tape supports exactly one backward pass")
        tape.used = True
        g = np.asarray(dy, dtype=float)
        if tape.squeeze:
            g = g[None, :]
        if g.shape != tape.pre[-1].shape:
            raise DimensionMismatch(f"dy has shape {np.shape(dy)}, output is {tape.pre[-1].shape}")
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * (tape.pre[i] > 0)
            grads[2 * i] = tape.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, (g[0] if tape.squeeze else g)


def reference_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Straight-line re-evaluation used to cross-check ``Mlp.forward``."""
    h = np.atleast_2d(np.asarray(x, dtype=float))
    for i in range(len(net.weights)):
        out = np.empty((h.shape[0], net.weights[i].shape[1]))
        for r in range(h.shape[0]):
            for c in range(out.shape[1]):
                out[r, c] = sum(h[r, k] * net.weights[i][k, c] for k in range(h.shape[1])) \
                    + net.biases[i][c]
        h = out if i == len(net.weights) - 1 else np.maximum(out, 0.0)
    return h[0] if np.ndim(x) == 1 else h


@dataclass
class AdamState:
    shapes: list[tuple[int, ...]]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros(s) for s in self.shapes]
            self.v = [np.zeros(s) for s in self.shapes]

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([p.shape for p in params], **kw)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
    """Bias-corrected Adam update applied in place to ``params``.

    ``weight_decay`` adds ``wd * param`` to each gradient (L2 regularisation).
    Non-finite gradients raise before any parameter is touched.
    """
    if len(params) != len(state.shapes) or len(grads) != len(params):
        raise ShapeMismatch("params/grads do not match the optimizer state")
    for p, g, s in zip(params, grads, state.shapes):
        if p.shape != s or np.shape(g) != s:
            raise ShapeMismatch(f"expected shape {s}, got {p.shape} / {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteValue("non-finite gradient; parameters left unchanged")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    """``target <- tau * online + (1 - tau) * target`` elementwise."""
    if not (0.0 <= tau <= 1.0):
        raise InvalidParameter(f"tau must lie in [0, 1], got {tau}")
    if target.sizes != online.sizes:
        raise ShapeMismatch(f"layouts differ: {target.sizes} vs {online.sizes}")
    for t, o in zip(target.params(), online.params()):
        t *= 1.0 - tau
        t += tau * o


def clip_weights(net: Mlp, c: float) -> None:
    if not (c > 0):
        raise InvalidParameter(f"clip constant must be positive, got {c}")
    for p in net.params():
        np.clip(p, -c, c, out=p)


def check_finite(net: Mlp) -> None:
    for p in net.params():
        if not np.all(np.isfinite(p)):
            raise NonFiniteValue("network parameters became non-finite")


def save_checkpoint(net: Mlp, path) -> None:
    sizes = np.asarray(net.sizes, dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<q", sizes.size))
        fh.write(sizes.tobytes())
        fh.write(net.flat().astype("<f8").tobytes())


def load_checkpoint(path) -> Mlp:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not an Mlp checkpoint")
    (L,) = struct.unpack_from("<q", data, 8)
    sizes = np.frombuffer(data, dtype="<i8", count=L, offset=16).tolist()
    net = Mlp(sizes, zero=True)
    flat = np.frombuffer(data, dtype="<f8", offset=16 + 8 * L)
    expected = sum(p.size for p in net.params())
    if flat.size != expected:
        raise ValueError(f"{path}: expected {expected} parameters, found {flat.size}")
    pos = 0
    for p in net.params():
        p[...] = flat[pos:pos + p.size].reshape(p.shape)
        pos += p.size
    return net
