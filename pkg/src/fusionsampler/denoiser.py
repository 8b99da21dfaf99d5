"""Small trained noise predictor over mixture worlds.

The network sees the noisy point, an identity channel, a style channel and
three timestep features, and is trained on the standard denoising loss
E||eps - eps_hat||^2 with per-slot condition dropout so the zero channel
doubles as the null condition. Channel vectors are whatever the caller
feeds through ConditionSet: one-hot class indicators here, learned
embeddings once an encoder is attached.
"""

from __future__ import annotations

import numpy as np

from fusionsampler.conditions import ConditionSet
from fusionsampler.mixture import MixtureWorld
from fusionsampler.nets import MLP, Adam, TrainingDiverged, flatten_grads
from fusionsampler.schedule import DiffusionSchedule, schedule_from_betas

__all__ = [
    "N_TIME_FEATURES",
    "time_features",
    "ToyDenoiser",
    "train_denoiser",
    "sample_training_batch",
]

N_TIME_FEATURES = 3


def time_features(t, T: int) -> np.ndarray:
    """Per-sample features [tau, sin(pi tau), cos(pi tau)], tau = t/T."""
    tau = np.asarray(t, dtype=float) / float(T)
    return np.stack([tau, np.sin(np.pi * tau), np.cos(np.pi * tau)], axis=-1)


class ToyDenoiser:
    """MLP noise predictor with (identity, style) condition channels.

    Input layout per row: [x_t (d) | identity channel (k_identity) | style
    channel (k_text) | time features (3)]. gamma scales the identity channel
    only; a null slot contributes a zero channel.
    """

    def __init__(self, net: MLP, d: int, k_identity: int, k_text: int,
                 schedule: DiffusionSchedule):
        expected = d + k_identity + k_text + N_TIME_FEATURES
        if net.d_in != expected or net.d_out != d:
            raise ValueError(
                f"net maps {net.d_in}->{net.d_out}, denoiser needs {expected}->{d}"
            )
        self.net = net
        self._d = int(d)
        self.k_identity = int(k_identity)
        self.k_text = int(k_text)
        self.schedule = schedule

    @property
    def T(self) -> int:
        return self.schedule.T

    @property
    def d(self) -> int:
        return self._d

    @property
    def identity_columns(self) -> slice:
        """Input columns holding the identity channel."""
        return slice(self._d, self._d + self.k_identity)

    @property
    def text_columns(self) -> slice:
        return slice(self._d + self.k_identity,
                     self._d + self.k_identity + self.k_text)

    def condition_channels(self, cond: ConditionSet | None, n: int) -> np.ndarray:
        """Build the (n, k_identity + k_text) condition block for a batch."""
        block = np.zeros((n, self.k_identity + self.k_text))
        if cond is None:
            return block
        if cond.identity is not None:
            ident = np.asarray(cond.identity, dtype=float)
            if ident.shape != (self.k_identity,):
                raise ValueError(
                    f"identity channel must have shape ({self.k_identity},),"
                    f" got {ident.shape}"
                )
            block[:, :self.k_identity] = cond.gamma * ident
        if cond.text is not None:
            text = np.asarray(cond.text, dtype=float)
            if text.shape != (self.k_text,):
                raise ValueError(
                    f"style channel must have shape ({self.k_text},), got {text.shape}"
                )
            block[:, self.k_identity:] = text
        return block

    def _inputs(self, x2: np.ndarray, channels: np.ndarray, t) -> np.ndarray:
        feats = np.broadcast_to(time_features(t, self.T), (x2.shape[0], N_TIME_FEATURES))
        return np.concatenate([x2, channels, feats], axis=1)

    def predict_eps(self, x_t, cond: ConditionSet | None, t: int) -> np.ndarray:
        x = np.asarray(x_t, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("x_t must be finite")
        if not 1 <= t <= self.T:
            raise ValueError(f"t must lie in 1..{self.T}, got {t}")
        squeeze = x.ndim == 1
        x2 = np.atleast_2d(x)
        if x2.shape[1] != self._d:
            raise ValueError(f"x_t trailing dimension must be {self._d}, got {x2.shape[1]}")
        channels = self.condition_channels(cond, x2.shape[0])
        y, _ = self.net.forward(self._inputs(x2, channels, t))
        return y[0] if squeeze else y

    def to_jsonable(self) -> dict:
        return {
            "net": self.net.to_jsonable(),
            "d": self._d,
            "k_identity": self.k_identity,
            "k_text": self.k_text,
            "beta": self.schedule.beta.tolist(),
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "ToyDenoiser":
        return cls(MLP.from_jsonable(obj["net"]), obj["d"], obj["k_identity"],
                   obj["k_text"], schedule_from_betas(obj["beta"]))

    def copy(self) -> "ToyDenoiser":
        return ToyDenoiser(self.net.copy(), self._d, self.k_identity,
                           self.k_text, self.schedule)


def sample_training_batch(world: MixtureWorld, schedule: DiffusionSchedule,
                          rng: np.random.Generator, batch: int,
                          p_drop: float = 0.15):
    """One denoising-loss batch with per-slot condition dropout.

    Returns (x_t, channels, t, eps, cells, visible) where channels is the
    one-hot condition block after dropout, cells the true (i, c) indices and
    visible the per-slot keep flags. The draw order is fixed so the batch is
    a pure function of the generator state.
    """
    n_i, n_c = world.n_identities, world.n_styles
    flat_prior = world.prior().reshape(-1)
    cells = rng.choice(n_i * n_c, size=batch, p=flat_prior)
    means = world.cell_means().reshape(-1, world.d)
    x0 = means[cells] + world.s * rng.standard_normal((batch, world.d))
    t = rng.integers(1, schedule.T + 1, size=batch)
    eps = rng.standard_normal((batch, world.d))
    ab = schedule.alpha_bar[t]
    x_t = np.sqrt(ab)[:, None] * x0 + np.sqrt(1.0 - ab)[:, None] * eps
    visible = rng.random((batch, 2)) >= p_drop
    ident = np.eye(n_i)[cells // n_c] * visible[:, 0:1]
    text = np.eye(n_c)[cells % n_c] * visible[:, 1:2]
    return x_t, np.concatenate([ident, text], axis=1), t, eps, cells, visible


def train_denoiser(world: MixtureWorld, schedule: DiffusionSchedule,
                   steps: int, seed: int, *, batch: int = 256,
                   lr: float = 1.5e-3, hidden=(64, 64),
                   p_drop: float = 0.15) -> ToyDenoiser:
    """Fit ToyDenoiser on the denoising loss; deterministic per seed."""
    if not isinstance(steps, (int, np.integer)) or steps < 1:
        raise ValueError(f"steps must be a positive integer, got {steps!r}")
    d, n_i, n_c = world.d, world.n_identities, world.n_styles
    sizes = (d + n_i + n_c + N_TIME_FEATURES, *hidden, d)
    net = MLP(sizes, seed=seed)
    den = ToyDenoiser(net, d, n_i, n_c, schedule)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 1))))
    opt = Adam(net.n_params, lr=lr)
    for step in range(1, steps + 1):
        x_t, channels, t, eps, _, _ = sample_training_batch(
            world, schedule, rng, batch, p_drop)
        feats = time_features(t, schedule.T)
        y, acts = net.forward(np.concatenate([x_t, channels, feats], axis=1))
        resid = y - eps
        loss = float(np.mean(resid * resid))
        if not np.isfinite(loss):
            raise TrainingDiverged(step, loss)
        grads, _ = net.backward(acts, 2.0 * resid / batch)
        net.set_flat(opt.step(net.get_flat(), flatten_grads(grads)))
    return den
