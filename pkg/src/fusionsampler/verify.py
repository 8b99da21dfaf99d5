"""Self-checks for the numerical core, runnable as a batch.

Each check is a named function returning pass/fail plus a one-line detail;
run_checks() executes them in a fixed order so the command-line front end can
print one row per check. The checks cross-validate independent code paths
(closed-form score vs finite differences, fused step vs two-stage
composition) rather than re-asserting constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fusionsampler.conditions import ConditionSet
from fusionsampler.encoder import new_promptnet, promptnet_loss_and_grads
from fusionsampler.denoiser import N_TIME_FEATURES, ToyDenoiser
from fusionsampler.guidance import GuidanceWeights
from fusionsampler.mixture import MixtureOracle, oracle_eps, oracle_log_density
from fusionsampler.nets import MLP, fd_gradient, flatten_grads
from fusionsampler.posterior import (
    check_variance_bound,
    fused_update_coefficients,
    predict_x0,
    renoise_coefficients,
    renoise_mean,
    sample_prev_mean,
)
from fusionsampler.sampler import FusionConfig, sample_trajectory
from fusionsampler.schedule import SigmaProfile, build_schedule
from fusionsampler.worlds import identity_condition, product_world, style_condition

__all__ = ["CheckResult", "CHECK_NAMES", "run_checks"]


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one named self-check."""

    name: str
    passed: bool
    detail: str


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _rel(err: float, scale: float) -> float:
    return err / max(scale, 1e-12)


def _check_oracle_score_fd():
    """Closed-form eps against central differences of the log density."""
    world = product_world()
    conds = [
        None,
        ConditionSet(identity=identity_condition(world, 0, 2.5),
                     text=style_condition(world, 1, 2.0)),
    ]
    rng = _rng(101)
    h = 1e-5
    worst = 0.0
    probes = 0
    for cond in conds:
        for ab in (0.9, 0.5, 0.1):
            for _ in range(4):
                x = world.data_mean() + 2.0 * rng.standard_normal(world.d)
                eps = oracle_eps(world, x, cond, ab)
                grad = np.zeros(world.d)
                for i in range(world.d):
                    step = np.zeros(world.d)
                    step[i] = h
                    grad[i] = (oracle_log_density(world, x + step, cond, ab)
                               - oracle_log_density(world, x - step, cond, ab)) / (2 * h)
                eps_fd = -np.sqrt(1.0 - ab) * grad
                worst = max(worst, _rel(np.max(np.abs(eps - eps_fd)),
                                        np.max(np.abs(eps))))
                probes += 1
    return worst < 1e-6, f"max rel err {worst:.2e} over {probes} probes"


def _check_posterior_two_path():
    """Fused step vs reverse-then-renoise composition: same mean and variance."""
    schedule = build_schedule()
    rng = _rng(202)
    worst_mean = 0.0
    worst_var = 0.0
    for _ in range(20):
        t = int(rng.integers(2, schedule.T + 1))
        ab_t = float(schedule.alpha_bar[t])
        ab_prev = float(schedule.alpha_bar[t - 1])
        sigma = float(rng.uniform(0.25, 0.95)) * np.sqrt(1.0 - ab_prev)
        x_t = 2.0 * rng.standard_normal(3)
        eps_tilde = rng.standard_normal(3)
        x0 = predict_x0(x_t, eps_tilde, ab_t)
        m1 = sample_prev_mean(x_t, x0, ab_t, ab_prev, sigma)
        c = renoise_coefficients(x0, ab_t, ab_prev, sigma)
        mean_two = renoise_mean(m1, x0, ab_t, ab_prev, sigma)
        var_two = (c.Sigma_scale * c.A_scale * c.L_scale) ** 2 * sigma ** 2 \
            + c.Sigma_scale
        eps_coeff, noise_coeff = fused_update_coefficients(ab_t, ab_prev, sigma)
        mean_fused = x_t - eps_coeff * eps_tilde
        worst_mean = max(worst_mean, _rel(np.max(np.abs(mean_two - mean_fused)),
                                          np.max(np.abs(mean_fused))))
        worst_var = max(worst_var, _rel(abs(var_two - noise_coeff ** 2),
                                        noise_coeff ** 2))
    passed = worst_mean < 1e-9 and worst_var < 1e-9
    return passed, (f"max rel err mean {worst_mean:.2e}"
                    f" var {worst_var:.2e} over 20 probes")


def _check_boundary_sigma_collapse():
    """At sigma = sqrt(1 - alpha_bar_prev) both fused coefficients collapse
    to sqrt(1 - alpha_bar_t), every timestep."""
    schedule = build_schedule()
    worst = 0.0
    for t in range(1, schedule.T + 1):
        ab_t = float(schedule.alpha_bar[t])
        ab_prev = float(schedule.alpha_bar[t - 1])
        sigma_b = float(np.sqrt(1.0 - ab_prev))
        eps_coeff, noise_coeff = fused_update_coefficients(ab_t, ab_prev, sigma_b)
        target = np.sqrt(1.0 - ab_t)
        worst = max(worst, abs(eps_coeff - target) / target,
                    abs(noise_coeff - target) / target)
    return worst < 5e-15, f"max rel err {worst:.2e} across T={schedule.T} steps"


def _check_variance_bound():
    """Feasible noise profiles keep the fused noise at or above the
    matched-drift single-step alternative."""
    schedule = build_schedule()
    rng = _rng(303)
    profiles = [SigmaProfile("boundary"), SigmaProfile("ddim_eta", eta=0.3),
                SigmaProfile("ddim_eta", eta=1.0)]
    gaps = np.sqrt(1.0 - schedule.alpha_bar[:-1])
    for _ in range(4):
        u = rng.uniform(0.0, 0.999, size=schedule.T)
        profiles.append(SigmaProfile("custom", values=u * gaps))
    min_margin = np.inf
    bad = []
    for profile in profiles:
        report = check_variance_bound(schedule, profile)
        min_margin = min(min_margin, float(np.min(report.margins)))
        if not report.ok:
            bad.append(profile.kind)
    if bad:
        return False, f"violations under profiles: {' '.join(bad)}"
    return True, f"{len(profiles)} profiles clean; min margin {min_margin:.3e}"


def _check_m0_matches_independent():
    """mode='fusion' with m=0 must reproduce mode='independent' bit for bit."""
    world = product_world()
    schedule = build_schedule(T=12, beta_end=0.15)
    predictor = MixtureOracle(world, schedule)
    cond = ConditionSet(identity=identity_condition(world, 0, 2.0),
                        text=style_condition(world, 1, 2.0))
    trials = [
        (GuidanceWeights(), SigmaProfile("boundary")),
        (GuidanceWeights(omega=1.5, omega1=3.0, omega2=0.5),
         SigmaProfile("ddim_eta", eta=0.7)),
        (GuidanceWeights(omega=4.0, omega1=0.5, omega2=2.0),
         SigmaProfile("ddim_eta", eta=0.0)),
    ]
    for i, (weights, sigma) in enumerate(trials):
        cfg_fusion = FusionConfig(m=0, use_refinement=True, weights=weights,
                                  sigma=sigma, mode="fusion")
        cfg_indep = FusionConfig(m=0, use_refinement=True, weights=weights,
                                 sigma=sigma, mode="independent")
        rec_a = sample_trajectory(cond, cfg_fusion, predictor, schedule, 6, seed=40 + i)
        rec_b = sample_trajectory(cond, cfg_indep, predictor, schedule, 6, seed=40 + i)
        if rec_a.samples.tobytes() != rec_b.samples.tobytes():
            gap = np.max(np.abs(rec_a.samples - rec_b.samples))
            return False, f"trial {i} differs; max abs gap {gap:.2e}"
    return True, f"{len(trials)} configurations bit-identical at n=6 T={schedule.T}"


def _check_mlp_gradient_fd():
    """Backprop through the plain net against finite differences."""
    net = MLP((4, 7, 3), seed=5)
    x = _rng(404).standard_normal((5, 4))
    y, acts = net.forward(x)
    grads, _ = net.backward(acts, y)
    g = flatten_grads(grads)

    def loss(flat):
        probe = net.copy()
        probe.set_flat(flat)
        out, _ = probe.forward(x)
        return 0.5 * float(np.sum(out * out))

    g_fd = fd_gradient(loss, net.get_flat())
    worst = _rel(np.max(np.abs(g - g_fd)), np.max(np.abs(g)))
    return worst < 1e-6, f"max rel err {worst:.2e} over {g.size} parameters"


def _check_encoder_chain_gradient_fd():
    """Encoder gradients chained through the frozen denoiser against finite
    differences on the encoder parameters."""
    world = product_world()
    schedule = build_schedule(T=16, beta_end=0.15)
    d, n_i, n_c = world.d, world.n_identities, world.n_styles
    den_net = MLP((d + n_i + n_c + N_TIME_FEATURES, 8, d), seed=11)
    den = ToyDenoiser(den_net, d, n_i, n_c, schedule)
    enc = new_promptnet(den, hidden=(6,), seed=7, zero_head=False)
    rng = _rng(505)
    xbar = rng.standard_normal(d)
    x_t = rng.standard_normal((5, d))
    eps = rng.standard_normal((5, d))
    text = np.eye(n_c)[rng.integers(0, n_c, size=5)]
    t = rng.integers(1, schedule.T + 1, size=5)
    lam = 0.37
    _, g = promptnet_loss_and_grads(enc, den, xbar, x_t, t, eps, text, lam)

    def loss(flat):
        probe = enc.copy()
        probe.net.set_flat(flat)
        value, _ = promptnet_loss_and_grads(probe, den, xbar, x_t, t, eps, text, lam)
        return value

    g_fd = fd_gradient(loss, enc.net.get_flat())
    worst = _rel(np.max(np.abs(g - g_fd)), np.max(np.abs(g)))
    return worst < 1e-6, f"max rel err {worst:.2e} over {g.size} parameters"


# order matters for the printed report: cheap algebra first, nets last
_CHECKS = (
    ("oracle_score_fd", _check_oracle_score_fd),
    ("posterior_two_path", _check_posterior_two_path),
    ("boundary_sigma_collapse", _check_boundary_sigma_collapse),
    ("variance_bound", _check_variance_bound),
    ("fusion_m0_matches_independent", _check_m0_matches_independent),
    ("mlp_gradient_fd", _check_mlp_gradient_fd),
    ("encoder_chain_gradient_fd", _check_encoder_chain_gradient_fd),
)

CHECK_NAMES = tuple(name for name, _ in _CHECKS)


def run_checks(name_filter: str | None = None) -> list[CheckResult]:
    """Run every check whose name contains name_filter (all when None).

    A check that raises is reported as failed with the exception in the
    detail column rather than aborting the batch.
    """
    results = []
    for name, fn in _CHECKS:
        if name_filter is not None and name_filter not in name:
            continue
        try:
            passed, detail = fn()
        except Exception as err:  # noqa: BLE001 - the batch must survive any check
            passed, detail = False, f"raised {type(err).__name__}: {err}"
        results.append(CheckResult(name=name, passed=bool(passed),
                                   detail=detail.replace(",", ";")))
    return results
