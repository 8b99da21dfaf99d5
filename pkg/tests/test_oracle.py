import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from fusionsampler.conditions import ConditionSet
from fusionsampler.guidance import eps_to_score, score_to_eps
from fusionsampler.mixture import (
    MixtureOracle,
    MixtureWorld,
    cell_log_weights,
    oracle_eps,
    oracle_log_density,
    oracle_predict_eps,
    oracle_responsibilities,
)
from fusionsampler.predictors import predict_eps
from fusionsampler.schedule import build_schedule
from fusionsampler.worlds import (
    conflict_world,
    identity_condition,
    leaky_identity_condition,
    product_world,
    single_gaussian_world,
    style_condition,
)


def fd_eps(world, x, cond, ab, h=1e-5):
    """Finite-difference reference: -sqrt(1-ab) * grad log p per coordinate."""
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (
            oracle_log_density(world, x + e, cond, ab)
            - oracle_log_density(world, x - e, cond, ab)
        ) / (2 * h)
    return -np.sqrt(1.0 - ab) * g


def test_unit_variance_world_eps_is_scaled_x():
    w = single_gaussian_world(mean=(0.0,), s=1.0)
    x = np.array([1.0])
    assert_allclose(oracle_eps(w, x, None, 0.36), [0.8], rtol=1e-12)
    for ab in (0.1, 0.5, 0.9):
        x = np.array([-1.7])
        assert_allclose(oracle_eps(w, x, None, ab), np.sqrt(1 - ab) * x, rtol=1e-12)


def test_symmetric_components_cancel_at_origin():
    w = MixtureWorld(
        means=np.array([[2.0, 1.0], [-2.0, -1.0]]),
        s=0.5,
        style_A=np.eye(2)[None],
        style_b=np.zeros((1, 2)),
        log_prior=np.zeros((2, 1)),
    )
    assert_allclose(oracle_eps(w, np.zeros(2), None, 0.4), np.zeros(2), atol=1e-15)


def test_gamma_zero_is_exactly_unconditional():
    w = product_world()
    x = np.array([0.3, -0.9])
    cond = ConditionSet(identity=identity_condition(w, 1, 3.0), gamma=0.0)
    assert_array_equal(oracle_eps(w, x, cond, 0.5), oracle_eps(w, x, None, 0.5))


def test_uniform_weights_equal_unconditional_exactly():
    w = product_world()
    x = np.array([1.1, 0.4])
    cond = ConditionSet(
        identity=np.zeros(w.n_identities), text=np.zeros(w.n_styles), gamma=1.0
    )
    assert_array_equal(oracle_eps(w, x, cond, 0.3), oracle_eps(w, x, None, 0.3))


def test_hard_conditioning_vanishes_at_diffused_mean():
    w = product_world(identity_spacing=10.0, style_offset=10.0, s=0.35)
    ab = 0.5
    cond = ConditionSet(
        identity=identity_condition(w, 1, np.inf),
        text=style_condition(w, 0, np.inf),
    )
    x = np.sqrt(ab) * w.cell_means()[1, 0]
    assert np.max(np.abs(oracle_eps(w, x, cond, ab))) < 1e-6


def test_finite_difference_probes():
    rng = np.random.default_rng(42)
    w = conflict_world()
    sched = build_schedule()
    for _ in range(25):
        t = int(rng.integers(1, sched.T + 1))
        ab = float(sched.alpha_bar[t])
        x = rng.normal(0.0, 1.5, size=2)
        cond = rng.choice(
            [
                None,
                ConditionSet(identity=identity_condition(w, 0, 2.0)),
                ConditionSet(text=style_condition(w, 1, 1.5)),
                ConditionSet(
                    identity=leaky_identity_condition(w, 0, 0, 3.0, 2.0),
                    text=style_condition(w, 1, 2.0),
                    gamma=0.7,
                ),
            ]
        )
        got = oracle_eps(w, x, cond, ab)
        want = fd_eps(w, x, cond, ab)
        assert np.linalg.norm(got - want) < 1e-4 * max(np.linalg.norm(want), 1e-3)


def test_responsibilities_normalize_and_batch():
    w = conflict_world()
    xs = np.array([[0.1, 0.2], [2.0, -1.0], [0.0, 3.0]])
    r = oracle_responsibilities(w, xs, None, 0.6)
    assert r.shape == (3, 2, 2)
    assert_allclose(r.sum(axis=(1, 2)), np.ones(3), rtol=1e-12)
    single = oracle_responsibilities(w, xs[1], None, 0.6)
    assert_allclose(single, r[1], rtol=1e-12)


def test_empty_cell_subset_rejected():
    w = product_world()
    cond = ConditionSet(identity=np.full(w.n_identities, -np.inf))
    with pytest.raises(ValueError, match="empty subset"):
        cell_log_weights(w, cond)


def test_eps_score_round_trip_through_oracle():
    w = conflict_world()
    x = np.array([0.5, -0.25])
    eps = oracle_eps(w, x, None, 0.44)
    assert_allclose(score_to_eps(eps_to_score(eps, 0.44), 0.44), eps, rtol=1e-12)


def test_data_moments_match_monte_carlo():
    w = conflict_world(a=2.0, s=0.35)
    rng = np.random.default_rng(9)
    draws = w.sample(200_000, rng)
    assert_allclose(draws.mean(axis=0), w.data_mean(), atol=0.02)
    assert_allclose(np.cov(draws.T), w.data_cov(), atol=0.05)


def test_conditioned_sampling_masks_cells():
    w = conflict_world()
    rng = np.random.default_rng(3)
    draws = w.sample(4000, rng, identity=0, style=1)
    target = w.cell_means()[0, 1]
    assert np.linalg.norm(draws.mean(axis=0) - target) < 0.05


def test_oracle_predictor_wraps_schedule():
    w = product_world()
    sched = build_schedule(T=10, beta_start=0.01, beta_end=0.3)
    oracle = MixtureOracle(w, sched)
    x = np.array([0.2, 0.4])
    for t in (1, 5, 10):
        want = oracle_eps(w, x, None, float(sched.alpha_bar[t]))
        assert_array_equal(oracle.predict_eps(x, None, t), want)
        assert_array_equal(predict_eps(oracle, x, None, t), want)
    with pytest.raises(ValueError, match="t must lie"):
        oracle_predict_eps(w, x, None, 11, sched)


def test_predict_eps_dispatch_validation():
    w = product_world()
    oracle = MixtureOracle(w, build_schedule(T=5, beta_start=0.1, beta_end=0.3))
    with pytest.raises(ValueError, match="finite"):
        predict_eps(oracle, np.array([np.nan, 0.0]), None, 1)
    with pytest.raises(ValueError, match="trailing dimension"):
        predict_eps(oracle, np.zeros(3), None, 1)


def test_world_validation_and_serialization():
    w = conflict_world()
    back = MixtureWorld.from_jsonable(w.to_jsonable())
    assert_allclose(back.means, w.means)
    assert_allclose(back.log_prior, w.log_prior)
    assert_allclose(back.data_cov(), w.data_cov())
    with pytest.raises(ValueError, match="positive std"):
        single_gaussian_world(s=0.0)
    with pytest.raises(ValueError, match="style_A"):
        MixtureWorld(
            means=np.zeros((1, 2)),
            s=1.0,
            style_A=np.zeros((1, 3, 3)),
            style_b=np.zeros((1, 2)),
            log_prior=np.zeros((1, 1)),
        )


def test_condition_set_helpers():
    cond = ConditionSet(identity=np.ones(2), text=np.zeros(3), gamma=0.5)
    assert cond.identity_only().text is None
    assert cond.text_only().identity is None
    assert cond.nulled().is_null
    assert cond.with_gamma(0.0).gamma == 0.0
    with pytest.raises(ValueError, match="gamma"):
        ConditionSet(gamma=1.5)
    with pytest.raises(ValueError, match="-inf"):
        ConditionSet(identity=np.array([np.inf]))


def test_condition_set_json_round_trip():
    import json

    cond = ConditionSet(
        identity=np.array([0.0, -np.inf, 3.5]),
        text=np.array([1.25, -2.0]),
        gamma=0.3,
    )
    back = ConditionSet.from_jsonable(json.loads(json.dumps(cond.to_jsonable())))
    assert back.identity.tobytes() == cond.identity.tobytes()
    assert back.text.tobytes() == cond.text.tobytes()
    assert back.gamma == cond.gamma

    null_back = ConditionSet.from_jsonable(ConditionSet().to_jsonable())
    assert null_back.is_null

    # full-grid log-weights must come back with their shape intact
    grid = ConditionSet(identity=np.array([[10.0, 16.0], [0.0, -np.inf]]))
    grid_back = ConditionSet.from_jsonable(
        json.loads(json.dumps(grid.to_jsonable())))
    assert grid_back.identity.shape == (2, 2)
    assert grid_back.identity.tobytes() == grid.identity.tobytes()


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**31),
    ab=st.floats(min_value=0.01, max_value=0.99),
    gamma=st.floats(min_value=0.0, max_value=1.0),
)
def test_oracle_batch_matches_per_sample(seed, ab, gamma):
    rng = np.random.default_rng(seed)
    w = conflict_world(a=float(rng.uniform(0.5, 3.0)), s=float(rng.uniform(0.1, 1.0)))
    cond = ConditionSet(
        identity=identity_condition(w, int(rng.integers(2)), float(rng.uniform(-2, 4))),
        text=style_condition(w, int(rng.integers(2)), float(rng.uniform(-2, 4))),
        gamma=gamma,
    )
    xs = rng.normal(0.0, 2.0, size=(5, 2))
    batch = oracle_eps(w, xs, cond, ab)
    assert np.all(np.isfinite(batch))
    for k in range(5):
        assert_allclose(batch[k], oracle_eps(w, xs[k], cond, ab), rtol=1e-12, atol=1e-14)
