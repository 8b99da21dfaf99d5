"""Dense tanh networks with hand-rolled reverse-mode gradients and Adam.

Training code in this package never touches an autodiff framework. Each
network is a list of (W, b) pairs with an explicit backward pass, so
gradient checks stay honest and results are bit-reproducible per seed.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "MLP",
    "Adam",
    "TrainingDiverged",
    "flatten_grads",
    "fd_gradient",
]


class TrainingDiverged(RuntimeError):
    """Loss stopped being finite; .step records where."""

    def __init__(self, step: int, loss):
        super().__init__(f"training diverged at step {step}: loss={loss!r}")
        self.step = step


class MLP:
    """Fully-connected net: tanh hidden layers, linear output head.

    sizes = (d_in, h1, ..., d_out). Layer l maps activations a to
    tanh(a @ W[l] + b[l]) except the last layer, which stays linear.
    zero_head=True zeroes the head so the initial output is exactly 0.
    """

    def __init__(self, sizes, seed: int = 0, zero_head: bool = False):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"sizes must list >= 2 positive widths, got {sizes!r}")
        self.sizes = sizes
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        self.W = []
        self.b = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.W.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.b.append(np.zeros(fan_out))
        if zero_head:
            self.W[-1][:] = 0.0

    @property
    def d_in(self) -> int:
        return self.sizes[0]

    @property
    def d_out(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.W, self.b))

    def forward(self, x):
        """Returns (y, cache) for a (n, d_in) batch; cache feeds backward()."""
        a = np.asarray(x, dtype=float)
        if a.ndim != 2 or a.shape[1] != self.d_in:
            raise ValueError(f"input must be (n, {self.d_in}), got shape {a.shape}")
        acts = [a]
        last = len(self.W) - 1
        for l, (w, b) in enumerate(zip(self.W, self.b)):
            z = a @ w + b
            a = z if l == last else np.tanh(z)
            acts.append(a)
        return a, acts

    def backward(self, acts, grad_out):
        """Gradients of a summed loss wrt parameters and input.

        grad_out is dL/dy with y = acts[-1]. Returns (grads, grad_x) where
        grads is a list of (dW, db) matching the layer layout.
        """
        delta = np.asarray(grad_out, dtype=float)
        grads = [None] * len(self.W)
        for l in range(len(self.W) - 1, -1, -1):
            grads[l] = (acts[l].T @ delta, delta.sum(axis=0))
            delta = delta @ self.W[l].T
            if l > 0:
                # tanh' = 1 - tanh^2, and acts[l] already stores the tanh
                delta = delta * (1.0 - acts[l] ** 2)
        return grads, delta

    def get_flat(self) -> np.ndarray:
        return np.concatenate(
            [p.ravel() for pair in zip(self.W, self.b) for p in pair]
        )

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(
                f"expected {self.n_params} parameters, got shape {flat.shape}"
            )
        pos = 0
        for l in range(len(self.W)):
            for p in (self.W[l], self.b[l]):
                p[...] = flat[pos:pos + p.size].reshape(p.shape)
                pos += p.size

    def copy(self) -> "MLP":
        dup = MLP.__new__(MLP)
        dup.sizes = self.sizes
        dup.W = [w.copy() for w in self.W]
        dup.b = [b.copy() for b in self.b]
        return dup

    def to_jsonable(self) -> dict:
        return {"sizes": list(self.sizes), "params": self.get_flat().tolist()}

    @classmethod
    def from_jsonable(cls, obj: dict) -> "MLP":
        net = cls(obj["sizes"])
        net.set_flat(np.asarray(obj["params"], dtype=float))
        return net


def flatten_grads(grads) -> np.ndarray:
    """Flatten backward()'s (dW, db) list in get_flat() order."""
    return np.concatenate([g.ravel() for pair in grads for g in pair])


class Adam:
    """Adam on a flat parameter vector, bias-corrected."""

    def __init__(self, n: int, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not (np.isfinite(lr) and lr > 0.0):
            raise ValueError(f"lr must be positive, got {lr!r}")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def fd_gradient(f, x, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, one probe per entry."""
    x = np.asarray(x, dtype=float)
    g = np.zeros(x.size)
    for i in range(x.size):
        step = np.zeros(x.size)
        step[i] = h
        g[i] = (f(x + step.reshape(x.shape)) - f(x - step.reshape(x.shape))) / (2.0 * h)
    return g.reshape(x.shape)
