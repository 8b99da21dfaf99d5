"""Reference-conditioned embedding encoder and its training protocols.

ToyPromptNet maps (reference point, current noisy point, time features) to
an embedding consumed by ToyDenoiser's identity channel. Training minimizes
the denoising loss through the frozen denoiser plus an L2 penalty
lam * |S|^2 on the emitted embedding; the free-embedding variant instead
freezes the encoder and optimizes a single vector pulled toward an anchor.
finetune_customize adapts encoder and denoiser jointly to one reference,
touching only the denoiser rows that multiply the condition channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fusionsampler.conditions import ConditionSet
from fusionsampler.denoiser import N_TIME_FEATURES, ToyDenoiser, time_features
from fusionsampler.mixture import MixtureWorld, oracle_responsibilities
from fusionsampler.nets import MLP, Adam, TrainingDiverged, flatten_grads

__all__ = [
    "ToyPromptNet",
    "TrainingConfig",
    "new_promptnet",
    "encode",
    "train_promptnet",
    "finetune_customize",
    "EncoderConditionedDenoiser",
    "augment_reference",
    "default_anchor",
    "promptnet_loss_and_grads",
]


class ToyPromptNet:
    """Encoder (x_ref, x_t, time) -> S in R^k.

    constant, when set, short-circuits the network: encode() returns that
    vector for every input. That is how the free-embedding variant is
    represented after training.
    """

    def __init__(self, net: MLP, d: int, k: int, T: int,
                 constant: np.ndarray | None = None):
        expected = 2 * d + N_TIME_FEATURES
        if net.d_in != expected or net.d_out != k:
            raise ValueError(
                f"net maps {net.d_in}->{net.d_out}, encoder needs {expected}->{k}"
            )
        self.net = net
        self.d = int(d)
        self.k = int(k)
        self.T = int(T)
        self.constant = None if constant is None else np.asarray(constant, dtype=float)
        if self.constant is not None and self.constant.shape != (self.k,):
            raise ValueError(f"constant embedding must have shape ({self.k},)")

    def inputs(self, x_ref, x_t, t) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(x_t, dtype=float))
        if x2.shape[1] != self.d:
            raise ValueError(f"x_t trailing dimension must be {self.d}, got {x2.shape[1]}")
        n = x2.shape[0]
        ref = np.asarray(x_ref, dtype=float)
        if ref.shape not in ((self.d,), (n, self.d)):
            raise ValueError(
                f"x_ref must have shape ({self.d},) or ({n}, {self.d}), got {ref.shape}"
            )
        ref = np.broadcast_to(ref, (n, self.d))
        feats = np.broadcast_to(time_features(t, self.T), (n, N_TIME_FEATURES))
        return np.concatenate([ref, x2, feats], axis=1)

    def encode(self, x_ref, x_t, t) -> np.ndarray:
        squeeze = np.asarray(x_t).ndim == 1
        if self.constant is not None:
            n = 1 if squeeze else np.asarray(x_t).shape[0]
            out = np.tile(self.constant, (n, 1))
        else:
            out, _ = self.net.forward(self.inputs(x_ref, x_t, t))
        return out[0] if squeeze else out

    def copy(self) -> "ToyPromptNet":
        return ToyPromptNet(self.net.copy(), self.d, self.k, self.T,
                            None if self.constant is None else self.constant.copy())

    def to_jsonable(self) -> dict:
        return {
            "net": self.net.to_jsonable(),
            "d": self.d,
            "k": self.k,
            "T": self.T,
            "constant": None if self.constant is None else self.constant.tolist(),
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "ToyPromptNet":
        const = obj["constant"]
        return cls(MLP.from_jsonable(obj["net"]), obj["d"], obj["k"], obj["T"],
                   None if const is None else np.asarray(const, dtype=float))


def encode(net: ToyPromptNet, x_ref, x_t, t) -> np.ndarray:
    """Deterministic embedding of a reference at one diffusion time."""
    return net.encode(x_ref, x_t, t)


def new_promptnet(denoiser: ToyDenoiser, hidden=(32, 32), seed: int = 0,
                  zero_head: bool = True) -> ToyPromptNet:
    """Fresh encoder sized for a denoiser; the zero head makes the initial
    embedding exactly 0, i.e. the null condition."""
    d, k = denoiser.d, denoiser.k_identity
    net = MLP((2 * d + N_TIME_FEATURES, *hidden, k), seed=seed, zero_head=zero_head)
    return ToyPromptNet(net, d, k, denoiser.T)


@dataclass(frozen=True)
class TrainingConfig:
    """Encoder training knobs. lam weighs the embedding regularizer."""

    lam: float = 0.0
    steps: int = 600
    batch: int = 128
    augment: bool = True
    lr: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError(f"lam must be a nonnegative real, got {self.lam!r}")
        if not isinstance(self.steps, (int, np.integer)) or self.steps < 0:
            raise ValueError(f"steps must be a nonnegative integer, got {self.steps!r}")
        if not isinstance(self.batch, (int, np.integer)) or self.batch < 1:
            raise ValueError(f"batch must be a positive integer, got {self.batch!r}")
        if not (np.isfinite(self.lr) and self.lr > 0.0):
            raise ValueError(f"lr must be positive, got {self.lr!r}")

    def to_jsonable(self) -> dict:
        return {
            "lam": float(self.lam),
            "steps": int(self.steps),
            "batch": int(self.batch),
            "augment": bool(self.augment),
            "lr": float(self.lr),
            "seed": int(self.seed),
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "TrainingConfig":
        return cls(lam=obj["lam"], steps=obj["steps"], batch=obj["batch"],
                   augment=obj["augment"], lr=obj["lr"], seed=obj["seed"])


def augment_reference(x0: np.ndarray, rng: np.random.Generator,
                      scale: np.ndarray) -> np.ndarray:
    """Jittered, per-axis rescaled views of a reference batch."""
    factors = rng.uniform(0.9, 1.1, size=x0.shape)
    jitter = 0.05 * scale * rng.standard_normal(x0.shape)
    return x0 * factors + jitter


def default_anchor(world: MixtureWorld, denoiser: ToyDenoiser, x_ref) -> np.ndarray:
    """Channel embedding of the reference's most plausible identity class."""
    r = oracle_responsibilities(world, np.asarray(x_ref, dtype=float), None, 1.0 - 1e-9)
    ident = r.reshape(world.n_identities, world.n_styles).sum(axis=1)
    anchor = np.zeros(denoiser.k_identity)
    anchor[int(np.argmax(ident))] = 1.0
    return anchor


def _data_scale(world: MixtureWorld) -> np.ndarray:
    return np.sqrt(np.diag(world.data_cov()))


def _draw_prior_batch(world: MixtureWorld, rng: np.random.Generator, n: int):
    flat = world.prior().reshape(-1)
    cells = rng.choice(flat.size, size=n, p=flat)
    x0 = world.cell_means().reshape(-1, world.d)[cells] \
        + world.s * rng.standard_normal((n, world.d))
    return x0, cells


def _diffuse(schedule, xbar, t, eps):
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab)[:, None] * xbar + np.sqrt(1.0 - ab)[:, None] * eps


def promptnet_loss_and_grads(net: ToyPromptNet, denoiser: ToyDenoiser,
                             xbar, x_t, t, eps, text, lam: float):
    """Chained loss mean|eps_hat - eps|^2 + lam mean|S|^2 on one fixed batch,
    with its gradient wrt the encoder's flat parameters (denoiser frozen)."""
    batch = x_t.shape[0]
    s_out, acts_e = net.net.forward(net.inputs(xbar, x_t, t))
    inputs = np.concatenate(
        [x_t, s_out, text, time_features(t, denoiser.T)], axis=1)
    y, acts_d = denoiser.net.forward(inputs)
    resid = y - eps
    loss = float(np.mean(np.sum(resid * resid, axis=1))
                 + lam * np.mean(np.sum(s_out * s_out, axis=1)))
    _, grad_in = denoiser.net.backward(acts_d, 2.0 * resid / batch)
    g_s = grad_in[:, denoiser.identity_columns] + 2.0 * lam * s_out / batch
    grads_e, _ = net.net.backward(acts_e, g_s)
    return loss, flatten_grads(grads_e)


def train_promptnet(world: MixtureWorld, denoiser: ToyDenoiser,
                    tc: TrainingConfig, *, free_embedding: bool = False,
                    x_ref=None, anchor=None, hidden=(32, 32)) -> ToyPromptNet:
    """Fit the encoder through the frozen denoiser.

    Standard mode minimizes E|eps - eps_hat|^2 + lam |S|^2 over the world's
    prior, feeding each draw's style one-hot as the text channel and the
    augmented view of the draw as the reference. free_embedding freezes the
    network and optimizes one embedding vector on views of x_ref with a null
    text channel, the regularizer becoming lam |S - anchor|^2; the anchor
    (default: the reference class's channel embedding) is also the starting
    point. tc.steps=0 returns the initialization unchanged.
    """
    if free_embedding and x_ref is None:
        raise ValueError("free_embedding mode needs x_ref")
    sched = denoiser.schedule
    d = world.d
    n_c = world.n_styles
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((tc.seed, 2))))
    net = new_promptnet(denoiser, hidden=hidden, seed=tc.seed)
    scale = _data_scale(world)

    if free_embedding:
        if anchor is None:
            anchor = default_anchor(world, denoiser, x_ref)
        anchor = np.asarray(anchor, dtype=float)
        if anchor.shape != (denoiser.k_identity,):
            raise ValueError(
                f"anchor must have shape ({denoiser.k_identity},), got {anchor.shape}"
            )
        net.constant = anchor.copy()
        x_ref = np.asarray(x_ref, dtype=float)
        s_free = anchor.copy()
        opt = Adam(denoiser.k_identity, lr=tc.lr)
        for step in range(1, tc.steps + 1):
            x0 = np.broadcast_to(x_ref, (tc.batch, d))
            xbar = augment_reference(x0, rng, scale) if tc.augment else np.array(x0)
            t = rng.integers(1, sched.T + 1, size=tc.batch)
            eps = rng.standard_normal((tc.batch, d))
            x_t = _diffuse(sched, xbar, t, eps)
            channels = np.zeros((tc.batch, denoiser.k_identity + denoiser.k_text))
            channels[:, :denoiser.k_identity] = s_free
            inputs = np.concatenate([x_t, channels, time_features(t, sched.T)], axis=1)
            y, acts = denoiser.net.forward(inputs)
            resid = y - eps
            loss = float(np.mean(np.sum(resid * resid, axis=1))
                         + tc.lam * np.sum((s_free - anchor) ** 2))
            if not np.isfinite(loss):
                raise TrainingDiverged(step, loss)
            _, grad_in = denoiser.net.backward(acts, 2.0 * resid / tc.batch)
            g = grad_in[:, denoiser.identity_columns].sum(axis=0) \
                + 2.0 * tc.lam * (s_free - anchor)
            s_free = opt.step(s_free, g)
        net.constant = s_free
        return net

    opt = Adam(net.net.n_params, lr=tc.lr)
    for step in range(1, tc.steps + 1):
        x0, cells = _draw_prior_batch(world, rng, tc.batch)
        xbar = augment_reference(x0, rng, scale) if tc.augment else x0
        t = rng.integers(1, sched.T + 1, size=tc.batch)
        eps = rng.standard_normal((tc.batch, d))
        x_t = _diffuse(sched, xbar, t, eps)
        text = np.eye(n_c)[cells % n_c]
        loss, flat_g = promptnet_loss_and_grads(
            net, denoiser, xbar, x_t, t, eps, text, tc.lam)
        if not np.isfinite(loss):
            raise TrainingDiverged(step, loss)
        net.net.set_flat(opt.step(net.net.get_flat(), flat_g))
    return net


def _condition_row_mask(denoiser: ToyDenoiser) -> np.ndarray:
    """Flat-parameter mask selecting the first-layer rows that multiply the
    condition channels; everything else stays frozen under the mask."""
    mask = np.zeros(denoiser.net.n_params)
    h = denoiser.net.sizes[1]
    lo = denoiser.d
    hi = denoiser.d + denoiser.k_identity + denoiser.k_text
    for row in range(lo, hi):
        mask[row * h:(row + 1) * h] = 1.0
    return mask


def finetune_customize(net: ToyPromptNet, denoiser: ToyDenoiser, x_ref, *,
                       steps: int = 50, batch: int = 8, augment: bool = True,
                       seed: int = 0, lr: float = 2e-3):
    """Per-reference customization pass; returns updated copies.

    Jointly trains the encoder and the denoiser's condition-interaction rows
    (first-layer weights multiplying the condition channels, nothing else)
    on denoising draws around the single reference. Originals are untouched.
    """
    if not isinstance(steps, (int, np.integer)) or steps < 1:
        raise ValueError(f"steps must be a positive integer, got {steps!r}")
    if net.constant is not None:
        raise ValueError("cannot fine-tune a constant-embedding encoder")
    sched = denoiser.schedule
    d = denoiser.d
    x_ref = np.asarray(x_ref, dtype=float)
    net2 = net.copy()
    den2 = denoiser.copy()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 3))))
    # jitter scale from the reference magnitude, the only data in sight
    scale = np.maximum(np.abs(x_ref), 1.0)
    mask = _condition_row_mask(den2)
    opt_e = Adam(net2.net.n_params, lr=lr)
    opt_d = Adam(den2.net.n_params, lr=lr)
    for step in range(1, steps + 1):
        x0 = np.broadcast_to(x_ref, (batch, d))
        xbar = augment_reference(x0, rng, scale) if augment else np.array(x0)
        t = rng.integers(1, sched.T + 1, size=batch)
        eps = rng.standard_normal((batch, d))
        x_t = _diffuse(sched, xbar, t, eps)
        s_out, acts_e = net2.net.forward(net2.inputs(xbar, x_t, t))
        channels = np.concatenate([s_out, np.zeros((batch, den2.k_text))], axis=1)
        inputs = np.concatenate([x_t, channels, time_features(t, sched.T)], axis=1)
        y, acts_d = den2.net.forward(inputs)
        resid = y - eps
        loss = float(np.mean(np.sum(resid * resid, axis=1)))
        if not np.isfinite(loss):
            raise TrainingDiverged(step, loss)
        grads_d, grad_in = den2.net.backward(acts_d, 2.0 * resid / batch)
        grads_e, _ = net2.net.backward(acts_e, grad_in[:, den2.identity_columns])
        den2.net.set_flat(
            opt_d.step(den2.net.get_flat(), flatten_grads(grads_d) * mask))
        net2.net.set_flat(opt_e.step(net2.net.get_flat(), flatten_grads(grads_e)))
    return net2, den2


class EncoderConditionedDenoiser:
    """Noise predictor whose identity slot holds a reference point.

    predict_eps encodes cond.identity (interpreted as x_ref) at the current
    (x_t, t), scales the embedding by cond.gamma, and feeds the result to
    the wrapped denoiser's identity channel; the text slot passes through.
    """

    def __init__(self, encoder: ToyPromptNet, denoiser: ToyDenoiser):
        if encoder.k != denoiser.k_identity or encoder.d != denoiser.d:
            raise ValueError("encoder output does not fit the denoiser's identity channel")
        self.encoder = encoder
        self.denoiser = denoiser

    @property
    def d(self) -> int:
        return self.denoiser.d

    def predict_eps(self, x_t, cond: ConditionSet | None, t: int) -> np.ndarray:
        den = self.denoiser
        x = np.asarray(x_t, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("x_t must be finite")
        if not 1 <= t <= den.T:
            raise ValueError(f"t must lie in 1..{den.T}, got {t}")
        squeeze = x.ndim == 1
        x2 = np.atleast_2d(x)
        n = x2.shape[0]
        channels = np.zeros((n, den.k_identity + den.k_text))
        if cond is not None and cond.identity is not None:
            ref = np.asarray(cond.identity, dtype=float)
            if ref.shape != (den.d,):
                raise ValueError(
                    f"identity slot must hold a reference point of shape ({den.d},),"
                    f" got {ref.shape}"
                )
            s_out = self.encoder.encode(ref, x2, t)
            channels[:, :den.k_identity] = cond.gamma * s_out
        if cond is not None and cond.text is not None:
            text = np.asarray(cond.text, dtype=float)
            if text.shape != (den.k_text,):
                raise ValueError(
                    f"style channel must have shape ({den.k_text},), got {text.shape}"
                )
            channels[:, den.k_identity:] = text
        inputs = np.concatenate(
            [x2, channels, np.broadcast_to(time_features(t, den.T), (n, N_TIME_FEATURES))],
            axis=1,
        )
        y, _ = den.net.forward(inputs)
        return y[0] if squeeze else y
