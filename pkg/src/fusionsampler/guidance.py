"""Classifier-free guidance combiners and the eps/score identity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GuidanceWeights",
    "cfg_single",
    "cfg_independent",
    "cfg_multi",
    "eps_to_score",
    "score_to_eps",
]


@dataclass(frozen=True)
class GuidanceWeights:
    """Guidance strengths: omega for the joint rule, omega1/omega2 for the
    independent two-condition rule, omega_list for the n-condition extension
    (one entry per condition, the style weight last when present)."""

    omega: float = 2.0
    omega1: float = 2.0
    omega2: float = 2.0
    omega_list: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        vals = (self.omega, self.omega1, self.omega2, *self.omega_list)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"guidance weights must be finite, got {vals!r}")
        object.__setattr__(self, "omega_list", tuple(float(v) for v in self.omega_list))


def _as_matching_arrays(*vecs: object) -> list[np.ndarray]:
    arrays = [np.asarray(v, dtype=float) for v in vecs]
    for a in arrays[1:]:
        if a.shape != arrays[0].shape:
            raise ValueError(
                f"prediction shapes disagree: {a.shape} vs {arrays[0].shape}"
            )
    return arrays


def cfg_single(eps_joint, eps_uncond, omega: float) -> np.ndarray:
    """Joint-condition guidance: (1 + omega) * eps_joint - omega * eps_uncond."""
    ej, eu = _as_matching_arrays(eps_joint, eps_uncond)
    return (1.0 + omega) * ej - omega * eu


def cfg_independent(eps_uncond, eps_S, eps_C, w: GuidanceWeights) -> np.ndarray:
    """Independent-conditions guidance with separate strengths per slot."""
    eu, es, ec = _as_matching_arrays(eps_uncond, eps_S, eps_C)
    return eu + (1.0 + w.omega1) * (es - eu) + (1.0 + w.omega2) * (ec - eu)


def cfg_multi(eps_uncond, eps_conds, w: GuidanceWeights) -> np.ndarray:
    """n-condition guidance: eps_uncond + sum_i (1 + omega_i) * (eps_i - eps_uncond)."""
    if len(eps_conds) != len(w.omega_list):
        raise ValueError(
            f"need one weight per condition: {len(eps_conds)} conditions,"
            f" {len(w.omega_list)} weights"
        )
    eu, *es = _as_matching_arrays(eps_uncond, *eps_conds)
    out = eu.copy()
    for om, e in zip(w.omega_list, es):
        out += (1.0 + om) * (e - eu)
    return out


def eps_to_score(eps, alpha_bar_t: float) -> np.ndarray:
    """score = -eps / sqrt(1 - alpha_bar_t); requires alpha_bar_t in (0, 1)."""
    if not 0.0 < alpha_bar_t < 1.0:
        raise ValueError(f"alpha_bar_t must lie in (0, 1), got {alpha_bar_t!r}")
    return -np.asarray(eps, dtype=float) / np.sqrt(1.0 - alpha_bar_t)


def score_to_eps(score, alpha_bar_t: float) -> np.ndarray:
    """Inverse of eps_to_score."""
    if not 0.0 < alpha_bar_t < 1.0:
        raise ValueError(f"alpha_bar_t must lie in (0, 1), got {alpha_bar_t!r}")
    return -np.asarray(score, dtype=float) * np.sqrt(1.0 - alpha_bar_t)
