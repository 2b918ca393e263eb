import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpgpe.env import Trajectory
from mpgpe.estimators import (
    PgpeBatch,
    PgpeSample,
    estimator_variance,
    iw_pgpe_gradient,
    log_importance_weights,
    pgpe_baseline,
    pgpe_gradient,
    reinforce_gradient,
    weighted_baseline,
)
from mpgpe.policy import GaussianPolicy, PriorHyper, chain_basis, prior_draw, prior_score

from experiments import (
    ConstantBasis,
    bandit_returns,
    pgpe_bandit,
    reinforce_lqr,
    variance_scaling_verdict,
    within_se,
)

RHO = PriorHyper(np.array([1.0]), np.array([0.5]))


def random_batch(rng, n=50, B=3, rho=None):
    rho = rho or PriorHyper(rng.normal(size=B), rng.uniform(0.3, 2.0, B))
    th = prior_draw(rho, rng, n)
    return PgpeBatch.on_policy(th, rng.normal(size=n) * 3 + 1, rho), rho


# -- baseline ------------------------------------------------------------------


def test_baseline_constant_returns():
    rng = np.random.default_rng(0)
    batch, rho = random_batch(rng)
    batch.returns[:] = 4.25
    assert pgpe_baseline(batch, rho) == pytest.approx(4.25, rel=1e-14)


def test_baseline_single_sample():
    rho = PriorHyper.initial(2)
    s = PgpeSample(np.array([0.3, -1.0]), 7.5, rho)
    assert pgpe_baseline([s], rho) == 7.5


def test_baseline_fallback_when_scores_vanish():
    b, fell = weighted_baseline(np.array([1.0, 3.0]), np.zeros((2, 4)))
    assert fell and b == 2.0


def test_baseline_minimises_estimator_variance():
    rng = np.random.default_rng(1)
    for _ in range(20):
        batch, rho = random_batch(rng)
        scores = prior_score(batch.thetas, rho)
        b_star = pgpe_baseline(batch, rho)
        v_star = estimator_variance(batch.returns, scores, b_star)
        for b in np.linspace(batch.returns.min(), batch.returns.max(), 201):
            assert v_star <= estimator_variance(batch.returns, scores, b) + 1e-12


# -- PGPE --------------------------------------------------------------------


def test_pgpe_zero_when_returns_equal_baseline():
    rng = np.random.default_rng(2)
    batch, rho = random_batch(rng)
    batch.returns[:] = 3.0
    rep = pgpe_gradient(batch, rho, b=3.0)
    assert np.all(rep.vector == 0)
    assert not rep.same_sample_baseline and pgpe_gradient(batch, rho).same_sample_baseline


def test_pgpe_single_sample_at_mean():
    rho = PriorHyper(np.array([0.5, -1.0]), np.array([1.0, 2.0]))
    rep = pgpe_gradient([PgpeSample(rho.eta.copy(), 12.0, rho)], rho, b=0.0)
    np.testing.assert_array_equal(rep.grad_eta, 0.0)


def test_pgpe_empty_raises():
    with pytest.raises(ValueError):
        pgpe_gradient([], RHO)


def test_pgpe_bandit_unbiased():
    est, se, truth = pgpe_bandit(100_000, RHO, seed=0)
    assert within_se(est, se, truth)


def test_baseline_keeps_mean_and_cuts_variance():
    rng = np.random.default_rng(3)
    th = prior_draw(RHO, rng, 100_000)
    batch = PgpeBatch.on_policy(th, bandit_returns(th), RHO)
    g0 = pgpe_gradient(batch, RHO, b=0.0)
    gs = pgpe_gradient(batch, RHO)
    combined = np.sqrt(g0.standard_error() ** 2 + gs.standard_error() ** 2)
    assert np.all(np.abs(g0.vector - gs.vector) < 3 * combined)
    scores = prior_score(th, RHO)
    assert estimator_variance(batch.returns, scores, gs.baseline) <= estimator_variance(batch.returns, scores, 0.0)


# -- IW-PGPE -------------------------------------------------------------------


def test_iw_matches_pgpe_on_policy():
    rng = np.random.default_rng(4)
    for _ in range(10):
        batch, rho = random_batch(rng)
        a = iw_pgpe_gradient(batch, rho)
        b = pgpe_gradient(batch, rho)
        np.testing.assert_allclose(a.vector, b.vector, rtol=0, atol=1e-12)
        assert a.baseline == pytest.approx(b.baseline, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_weights_are_reciprocal(seed):
    rng = np.random.default_rng(seed)
    B = 4
    r1 = PriorHyper(rng.normal(size=B), rng.uniform(0.3, 2, B))
    r2 = PriorHyper(rng.normal(size=B), rng.uniform(0.3, 2, B))
    th = rng.normal(size=(10, B))
    lw12 = log_importance_weights(th, r1, r2.eta, r2.tau)
    lw21 = log_importance_weights(th, r2, r1.eta, r1.tau)
    np.testing.assert_allclose(np.exp(lw12) * np.exp(lw21), 1.0, rtol=1e-12)


def test_iw_bandit_unbiased_off_policy():
    behavior = PriorHyper(np.array([0.8]), np.array([0.7]))
    est, se, truth = pgpe_bandit(100_000, RHO, seed=1, behavior=behavior)
    assert within_se(est, se, truth)


def test_iw_drops_overflowing_weights(caplog):
    rho = PriorHyper(np.zeros(1), np.ones(1))
    narrow = PriorHyper(np.array([40.0]), np.array([1e-3]))
    good = PgpeBatch.on_policy(np.array([[0.1], [-0.2]]), np.array([1.0, 2.0]), rho)
    bad = PgpeBatch.on_policy(np.array([[0.0]]), np.array([5.0]), narrow)
    with caplog.at_level(logging.INFO, logger="mpgpe.estimators"):
        rep = iw_pgpe_gradient(good.extend(bad), rho)
    assert rep.n_dropped == 1 and rep.n_used == 2
    assert "dropped" in caplog.text
    np.testing.assert_allclose(rep.vector, iw_pgpe_gradient(good, rho).vector, rtol=1e-14)


# -- REINFORCE --------------------------------------------------------------------


def test_reinforce_zero_when_returns_equal_baseline():
    pol = GaussianPolicy(np.zeros(6), 1.0, chain_basis())
    rng = np.random.default_rng(5)
    trajs = [Trajectory(rng.uniform(0, 10, (4, 1)), rng.normal(size=(3, 1)), np.ones(3)) for _ in range(5)]
    b = sum(0.9**t for t in range(3))
    rep = reinforce_gradient(trajs, pol, gamma=0.9, b=b)
    np.testing.assert_allclose(rep.vector, 0.0, atol=1e-15)


def test_reinforce_actions_on_mean():
    pol = GaussianPolicy(np.array([0.5, 1.0, -1.0, 0.0, 2.0, 0.3]), 0.7, chain_basis())
    rng = np.random.default_rng(6)
    trajs = []
    for _ in range(4):
        s = rng.uniform(0, 10, (6, 1))
        trajs.append(Trajectory(s, pol.mean_action(s[:5]), rng.normal(size=5)))
    rep = reinforce_gradient(trajs, pol)
    np.testing.assert_allclose(rep.grad_eta, 0.0, atol=1e-12)


def test_reinforce_empty_raises():
    with pytest.raises(ValueError):
        reinforce_gradient([], GaussianPolicy(np.zeros(1), 1.0, ConstantBasis()))


def test_reinforce_lqr_unbiased():
    est, se, truth = reinforce_lqr(100_000, mu=0.5, sigma=0.8, target=2.0, seed=0)
    assert within_se(est, se, truth)


def test_variance_scaling_with_horizon():
    v = variance_scaling_verdict()
    assert v["reinforce_r2"] > 0.9 and v["reinforce_slope"] > 0
    assert v["pgpe_slope_p"] > 0.01
