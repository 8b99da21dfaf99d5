"""Gaussian-mixture data world and its exact noise-prediction oracle.

The world has identity components i with means mu_i and shared isotropic
variance s^2, and styles c acting as affine maps (A_c, b_c) on the means:
data for cell (i, c) is Normal(A_c mu_i + b_c, s^2 I). Forward noising at
signal level alpha_bar diffuses cell (i, c) to
Normal(sqrt(alpha_bar) m_ic, (alpha_bar s^2 + 1 - alpha_bar) I), so scores,
densities and responsibilities all have closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fusionsampler.conditions import ConditionSet
from fusionsampler.schedule import DiffusionSchedule

__all__ = [
    "MixtureWorld",
    "MixtureOracle",
    "oracle_eps",
    "oracle_log_density",
    "oracle_responsibilities",
    "oracle_predict_eps",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MixtureWorld:
    """means: (n_i, d); s: isotropic std; style_A: (n_c, d, d);
    style_b: (n_c, d); log_prior: (n_i, n_c), normalized at construction."""

    means: np.ndarray
    s: float
    style_A: np.ndarray
    style_b: np.ndarray
    log_prior: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        if means.ndim != 2 or means.shape[0] < 1:
            raise ValueError(f"means must be (n_i, d), got shape {means.shape}")
        n_i, d = means.shape
        A = np.asarray(self.style_A, dtype=float)
        b = np.asarray(self.style_b, dtype=float)
        if A.ndim != 3 or A.shape[1:] != (d, d):
            raise ValueError(f"style_A must be (n_c, {d}, {d}), got {A.shape}")
        n_c = A.shape[0]
        if b.shape != (n_c, d):
            raise ValueError(f"style_b must be ({n_c}, {d}), got {b.shape}")
        lp = np.asarray(self.log_prior, dtype=float)
        if lp.shape != (n_i, n_c):
            raise ValueError(f"log_prior must be ({n_i}, {n_c}), got {lp.shape}")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(A))
                and np.all(np.isfinite(b))):
            raise ValueError("world parameters must be finite")
        if np.any(np.isnan(lp)) or np.any(lp == np.inf):
            raise ValueError("log_prior may contain -inf but not nan or +inf")
        if not (np.isfinite(self.s) and self.s > 0.0):
            raise ValueError(f"s must be a positive std, got {self.s!r}")
        lp = lp - _logsumexp(lp.reshape(-1))
        for arr in (means, A, b, lp):
            arr.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "style_A", A)
        object.__setattr__(self, "style_b", b)
        object.__setattr__(self, "log_prior", lp)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_identities(self) -> int:
        return self.means.shape[0]

    @property
    def n_styles(self) -> int:
        return self.style_A.shape[0]

    def cell_means(self) -> np.ndarray:
        """Means of all (i, c) cells, shape (n_i, n_c, d)."""
        mapped = np.einsum("cde,ie->icd", self.style_A, self.means)
        return mapped + self.style_b[None, :, :]

    def prior(self) -> np.ndarray:
        return np.exp(self.log_prior)

    def data_mean(self) -> np.ndarray:
        pi = self.prior()
        return np.einsum("ic,icd->d", pi, self.cell_means())

    def data_cov(self) -> np.ndarray:
        pi = self.prior()
        m = self.cell_means()
        mean = np.einsum("ic,icd->d", pi, m)
        second = np.einsum("ic,icd,ice->de", pi, m, m)
        return self.s**2 * np.eye(self.d) + second - np.outer(mean, mean)

    def sample(self, n: int, rng: np.random.Generator,
               identity: int | None = None, style: int | None = None) -> np.ndarray:
        """Draw n data points, optionally pinned to one identity and/or style."""
        pi = self.prior()
        if identity is not None:
            mask = np.zeros_like(pi)
            mask[identity, :] = pi[identity, :]
            pi = mask
        if style is not None:
            mask = np.zeros_like(pi)
            mask[:, style] = pi[:, style]
            pi = mask
        total = pi.sum()
        if total <= 0.0:
            raise ValueError("requested identity/style pair has zero prior mass")
        flat = (pi / total).reshape(-1)
        cells = rng.choice(flat.size, size=n, p=flat)
        m = self.cell_means().reshape(-1, self.d)
        return m[cells] + self.s * rng.standard_normal((n, self.d))

    def to_jsonable(self) -> dict:
        return {
            "means": self.means.tolist(),
            "s": float(self.s),
            "style_A": self.style_A.tolist(),
            "style_b": self.style_b.tolist(),
            "log_prior": self.log_prior.tolist(),
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "MixtureWorld":
        return cls(
            means=np.asarray(obj["means"], dtype=float),
            s=float(obj["s"]),
            style_A=np.asarray(obj["style_A"], dtype=float),
            style_b=np.asarray(obj["style_b"], dtype=float),
            log_prior=np.asarray(obj["log_prior"], dtype=float),
        )


def _logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if axis is None else np.squeeze(out, axis=axis)


def _slot_grid(world: MixtureWorld, values: np.ndarray, slot: str) -> np.ndarray:
    """Broadcast a slot's log-weights to the (n_i, n_c) cell grid."""
    n_i, n_c = world.n_identities, world.n_styles
    if values.shape == (n_i, n_c):
        return values
    if slot == "identity" and values.shape == (n_i,):
        return np.broadcast_to(values[:, None], (n_i, n_c))
    if slot == "text" and values.shape == (n_c,):
        return np.broadcast_to(values[None, :], (n_i, n_c))
    raise ValueError(
        f"{slot} log-weights must have shape ({n_i},)"
        f" / ({n_c},) / ({n_i}, {n_c}) as appropriate, got {values.shape}"
    )


def cell_log_weights(world: MixtureWorld, cond: ConditionSet | None) -> np.ndarray:
    """Normalized log-weights over the (i, c) grid: prior plus condition terms.

    gamma scales the identity slot's log-weights; gamma=0 contributes nothing
    (exactly the prior), so excluded cells (-inf) are never multiplied by 0.
    """
    w = world.log_prior
    if cond is not None:
        if cond.identity is not None and cond.gamma != 0.0:
            w = w + cond.gamma * _slot_grid(world, cond.identity, "identity")
        if cond.text is not None:
            w = w + _slot_grid(world, cond.text, "text")
    if not np.any(w > -np.inf):
        raise ValueError("condition selects an empty subset of mixture cells")
    return w - _logsumexp(w.reshape(-1))


def _diffused_stats(world: MixtureWorld, x, alpha_bar_t: float):
    if not 0.0 < alpha_bar_t < 1.0:
        raise ValueError(f"alpha_bar_t must lie in (0, 1), got {alpha_bar_t!r}")
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.ndim != 2 or x2.shape[1] != world.d:
        raise ValueError(f"x must have trailing dimension {world.d}, got shape {x.shape}")
    if not np.all(np.isfinite(x2)):
        raise ValueError("x must be finite")
    v = alpha_bar_t * world.s**2 + 1.0 - alpha_bar_t
    m = world.cell_means().reshape(-1, world.d)
    diff = x2[:, None, :] - np.sqrt(alpha_bar_t) * m[None, :, :]
    loglik = -0.5 * np.sum(diff * diff, axis=-1) / v \
        - 0.5 * world.d * np.log(2.0 * np.pi * v)
    return x2, squeeze, v, m, loglik


def oracle_log_density(world: MixtureWorld, x, cond: ConditionSet | None,
                       alpha_bar_t: float):
    """log p_t(x | cond), the diffused mixture density under condition weights."""
    logw = cell_log_weights(world, cond).reshape(-1)
    x2, squeeze, _, _, loglik = _diffused_stats(world, x, alpha_bar_t)
    out = _logsumexp(logw[None, :] + loglik, axis=1)
    return float(out[0]) if squeeze else out


def oracle_responsibilities(world: MixtureWorld, x, cond: ConditionSet | None,
                            alpha_bar_t: float) -> np.ndarray:
    """Posterior cell probabilities r_ic(x) at noise level alpha_bar_t,
    shape (n_i, n_c) for a single x or (n, n_i, n_c) for a batch."""
    logw = cell_log_weights(world, cond).reshape(-1)
    x2, squeeze, _, _, loglik = _diffused_stats(world, x, alpha_bar_t)
    logits = logw[None, :] + loglik
    r = np.exp(logits - _logsumexp(logits, axis=1)[:, None])
    r = r.reshape(x2.shape[0], world.n_identities, world.n_styles)
    return r[0] if squeeze else r


def oracle_eps(world: MixtureWorld, x, cond: ConditionSet | None,
               alpha_bar_t: float) -> np.ndarray:
    """Exact eps = -sqrt(1 - alpha_bar) * grad log p_t(x | cond)."""
    logw = cell_log_weights(world, cond).reshape(-1)
    x2, squeeze, v, m, loglik = _diffused_stats(world, x, alpha_bar_t)
    logits = logw[None, :] + loglik
    r = np.exp(logits - _logsumexp(logits, axis=1)[:, None])
    # fixed-order reduction instead of r @ m: BLAS picks kernels by batch
    # shape, which would make a row's bits depend on the batch size
    post_mean = np.sum(r[:, :, None] * m[None, :, :], axis=1)
    eps = np.sqrt(1.0 - alpha_bar_t) * (x2 - np.sqrt(alpha_bar_t) * post_mean) / v
    return eps[0] if squeeze else eps


def oracle_predict_eps(world: MixtureWorld, x_t, cond: ConditionSet | None, t: int,
                       schedule: DiffusionSchedule) -> np.ndarray:
    """Timestep-indexed oracle prediction (the NoisePredictor entry point)."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t must lie in 1..{schedule.T}, got {t!r}")
    return oracle_eps(world, x_t, cond, float(schedule.alpha_bar[t]))


class MixtureOracle:
    """NoisePredictor realization backed by the closed-form mixture score."""

    def __init__(self, world: MixtureWorld, schedule: DiffusionSchedule):
        self.world = world
        self.schedule = schedule

    @property
    def d(self) -> int:
        return self.world.d

    def predict_eps(self, x_t, cond: ConditionSet | None, t: int) -> np.ndarray:
        return oracle_predict_eps(self.world, x_t, cond, t, self.schedule)
