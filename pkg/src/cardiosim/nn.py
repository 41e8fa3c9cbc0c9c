"""Small dense networks with hand-written backprop, in float64 numpy.

The codec and the dynamics model both train tiny fully-connected nets, so
the layer math, the AdamW optimizer, and the finite-difference gradient
check all live here. Gradients are exact analytic expressions; the test
suite holds every parameter group to a <1e-4 relative error against
central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when a training loss or network state goes non-finite."""


def _act(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(pre)
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "identity":
        return pre
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - out * out
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    if name == "identity":
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Mlp:
    """Fully-connected net: sizes[0] -> sizes[1] -> ... -> sizes[-1].

    `activations` has one entry per layer; the last is usually "identity".
    Weights are Glorot-uniform from a seeded generator, so identical seeds
    give bitwise-identical nets.
    """

    sizes: list[int]
    activations: list[str]
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("need one activation per layer")
        for w in self.weights:
            if not np.all(np.isfinite(w)):
                raise ValueError("non-finite weights")

    @classmethod
    def create(cls, sizes: list[int], activations: list[str], seed: int) -> "Mlp":
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(sizes=sizes, activations=list(activations), weights=weights, biases=biases)

    @classmethod
    def identity(cls, n: int) -> "Mlp":
        return cls(sizes=[n, n], activations=["identity"],
                   weights=[np.eye(n)], biases=[np.zeros(n)])

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Returns (output, cache) for a (batch, in_dim) input."""
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache = []
        for w, b, act in zip(self.weights, self.biases, self.activations):
            pre = h @ w.T + b
            out = _act(act, pre)
            cache.append((h, pre, out, act))
            h = out
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, dout: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Backprop dout (batch, out_dim) through the cached forward pass.

        Returns (weight grads, bias grads, input grad); grads sum over the
        batch, matching a loss written as a plain sum/mean outside.
        """
        dws = [None] * len(self.weights)
        dbs = [None] * len(self.biases)
        grad = np.atleast_2d(np.asarray(dout, dtype=np.float64))
        for i in range(len(self.weights) - 1, -1, -1):
            h, pre, out, act = cache[i]
            grad = grad * _act_grad(act, pre, out)
            dws[i] = grad.T @ h
            dbs[i] = grad.sum(axis=0)
            grad = grad @ self.weights[i]
        return dws, dbs, grad

    # -- flat parameter vector helpers (checkpoints, finite differences) --

    def param_groups(self) -> dict[str, np.ndarray]:
        groups: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            groups[f"layer{i}.W"] = w
            groups[f"layer{i}.b"] = b
        return groups

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params():
            raise ValueError(f"expected {self.n_params()} params, got {flat.size}")
        ofs = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[ofs:ofs + w.size].reshape(w.shape).copy()
            ofs += w.size
            self.biases[i] = flat[ofs:ofs + b.size].copy()
            ofs += b.size

    def copy(self) -> "Mlp":
        return Mlp(sizes=list(self.sizes), activations=list(self.activations),
                   weights=[w.copy() for w in self.weights],
                   biases=[b.copy() for b in self.biases])


class AdamW:
    """AdamW over a list of parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 5e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay:
                p -= lr * self.weight_decay * p
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def cosine_lr(base_lr: float, epoch: int, total_epochs: int, min_lr: float = 0.0) -> float:
    """Cosine annealing from base_lr down to min_lr over total_epochs."""
    if total_epochs <= 1:
        return base_lr
    frac = epoch / (total_epochs - 1)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * frac))


def finite_difference_check(loss_fn, groups: dict[str, np.ndarray],
                            h: float = 1e-5, max_entries: int = 40,
                            seed: int = 0) -> dict[str, float]:
    """Relative error of analytic grads vs central finite differences.

    `loss_fn()` must return (scalar loss, {group name: grad array}) and be a
    deterministic function of the current parameter values. For each group a
    seeded subset of entries is probed; the reported number is
    ||g_fd - g_an|| / max(||g_fd||, ||g_an||) over that subset.
    """
    rng = np.random.default_rng(seed)
    _, an_grads = loss_fn()
    errors: dict[str, float] = {}
    for name, param in groups.items():
        flat = param.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_entries else rng.choice(n, size=max_entries, replace=False)
        fd = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_fn()
            flat[i] = orig - h
            down, _ = loss_fn()
            flat[i] = orig
            fd[j] = (up - down) / (2.0 * h)
        an = an_grads[name].reshape(-1)[idx]
        denom = max(np.linalg.norm(fd), np.linalg.norm(an), 1e-12)
        errors[name] = float(np.linalg.norm(fd - an) / denom)
    return errors
