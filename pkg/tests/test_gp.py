import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpgpe import gp
from mpgpe.env import TransitionSet, collect_uniform_dataset, make_env

from oracles import gp_log_evidence_direct


def linear_data(n, rng, noise=0.0):
    s = rng.uniform(0, 10, (n, 1))
    a = rng.uniform(-5, 5, (n, 1))
    return TransitionSet(s, a, s + a + noise * rng.standard_normal((n, 1)))


@pytest.fixture(scope="module")
def bimodal_gp():
    data = collect_uniform_dataset(make_env("chainwalk_bimodal"), 20, np.random.default_rng(0))
    return gp.gp_fit(data)


def test_fit_is_grid_argmax():
    data = linear_data(40, np.random.default_rng(0), noise=0.3)
    m = gp.gp_fit(data)
    X, Y = data.inputs, data.s_next
    evs = [gp.log_evidence(X, Y, a, l, v) for a, l, v in gp.HyperGrid()]
    assert m.evidence == max(evs)
    assert gp.log_evidence(X, Y, m.amplitude, m.lengthscale, m.noise_var) == pytest.approx(max(evs), rel=1e-12)


def test_interpolates_noise_free_data():
    data = linear_data(30, np.random.default_rng(1))
    m = gp.gp_fit(data, gp.HyperGrid(noise_vars=(1e-6,)))
    mean, _ = gp.gp_predict(m, data.s, data.a)
    assert np.max(np.abs(mean - data.s_next)) < 1e-3


@pytest.mark.parametrize("n", [1, 5, 20])
def test_evidence_matches_direct_determinant(n):
    rng = np.random.default_rng(n)
    X = rng.uniform(0, 5, (n, 2))
    Y = rng.normal(size=(n, 2))
    for amp, ls, nv in [(1.0, 1.0, 0.1), (10.0, 0.5, 1e-2), (0.1, np.array([0.5, 2.0]), 1.0)]:
        fast = gp.log_evidence(X, Y, amp, ls, nv)
        slow = gp_log_evidence_direct(X, Y, amp, np.broadcast_to(ls, (2,)), nv)
        assert fast == pytest.approx(slow, abs=1e-8)


def test_predict_at_training_input():
    data = linear_data(15, np.random.default_rng(2), noise=0.2)
    m = gp.GpModel(data.inputs, data.s_next, 1, 10.0, 2.0, 1e-8)
    mean, _ = gp.gp_predict(m, data.s[3], data.a[3])
    assert mean[0] == pytest.approx(data.s_next[3, 0], abs=1e-3)


def test_variance_bounds(bimodal_gp):
    rng = np.random.default_rng(3)
    q_s = rng.uniform(-5, 15, (1000, 1))
    q_a = rng.uniform(-8, 8, (1000, 1))
    _, var = gp.gp_predict(bimodal_gp, q_s, q_a)
    assert np.all(var >= 0)
    assert np.all(var <= bimodal_gp.amplitude + 1e-8)


def test_variance_reverts_to_prior_far_away(bimodal_gp):
    _, var = gp.gp_predict(bimodal_gp, [1000.0], [1000.0])
    assert var[0] == pytest.approx(bimodal_gp.amplitude, rel=0.01)


def test_sample_moments(bimodal_gp):
    n = 100_000
    s, a = np.full((n, 1), 5.0), np.full((n, 1), 2.0)
    draws, ok = gp.gp_sample_batch(bimodal_gp, s, a, np.random.default_rng(4))
    assert ok.all()
    mean, var = gp.gp_predict(bimodal_gp, [5.0], [2.0])
    assert draws.mean() == pytest.approx(mean[0], rel=0.02)
    assert draws.var() == pytest.approx(var[0] + bimodal_gp.noise_var, rel=0.02)


def test_sample_zero_variance_limit():
    data = linear_data(10, np.random.default_rng(5))
    m = gp.GpModel(data.inputs, data.s_next, 1, 1.0, 3.0, 1e-12)
    mean, _ = gp.gp_predict(m, data.s[0], data.a[0])
    draw = gp.gp_sample(m, data.s[0], data.a[0], np.random.default_rng(0))
    assert draw[0] == pytest.approx(mean[0], abs=1e-4)


def test_sample_reproducible(bimodal_gp):
    a = gp.gp_sample(bimodal_gp, [5.0], [1.0], np.random.default_rng(9))
    b = gp.gp_sample(bimodal_gp, [5.0], [1.0], np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-50, 50).filter(lambda c: abs(c) > 1e-3), seed=st.integers(0, 1000))
def test_mean_linear_in_targets(c, seed):
    rng = np.random.default_rng(seed)
    data = linear_data(12, rng, noise=0.5)
    m1 = gp.GpModel(data.inputs, data.s_next, 1, 1.0, 2.0, 0.1)
    mc = gp.GpModel(data.inputs, c * data.s_next, 1, 1.0, 2.0, 0.1)
    q_s, q_a = rng.uniform(0, 10, (7, 1)), rng.uniform(-5, 5, (7, 1))
    np.testing.assert_allclose(gp.gp_predict(mc, q_s, q_a)[0], c * gp.gp_predict(m1, q_s, q_a)[0], rtol=1e-8, atol=1e-8)


@pytest.mark.parametrize("s,a", [(5.0, 2.0), (2.0, 4.0), (8.0, -3.0), (5.0, 0.0)])
def test_predictive_density_is_unimodal_on_bimodal_chain(bimodal_gp, s, a):
    x = np.linspace(-10, 20, 3001)
    p = gp.gp_density(bimodal_gp, [s], [a], x[:, None])
    interior = (p[1:-1] > p[:-2]) & (p[1:-1] > p[2:])
    assert interior.sum() == 1


def test_multi_output_shares_hyper_parameters():
    data = collect_uniform_dataset(make_env("arm2"), 3, np.random.default_rng(0))
    m = gp.gp_fit(data, gp.HyperGrid().scaled(10.0, 100.0))
    mean, var = gp.gp_predict(m, data.s[:4], data.a[:4])
    assert mean.shape == (4, 4) and var.shape == (4, 4)
    np.testing.assert_array_equal(var[:, 0], var[:, 3])


def test_factorization_failure_is_diagnosed():
    X = np.zeros((3, 2))
    with pytest.raises(gp.GpFitError, match="Cholesky"):
        gp.log_evidence(X, np.ones((3, 1)), 1.0, 1.0, -1.0)


def test_save_load_roundtrip(bimodal_gp):
    buf = io.StringIO()
    gp.save(bimodal_gp, buf)
    back = gp.load(io.StringIO(buf.getvalue()))
    q = np.linspace(0, 10, 11)[:, None]
    for x, y in zip(gp.gp_predict(back, q, -q / 2), gp.gp_predict(bimodal_gp, q, -q / 2)):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-14)
