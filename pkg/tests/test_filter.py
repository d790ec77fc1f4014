import numpy as np
import pytest
from scipy import stats

from conftest import random_instance, random_theta
from tvtp.filter import (
    ZeroLikelihoodError,
    batch_period_logdens,
    forward_filter,
    initial_distribution,
    kim_smoother,
    loglik,
    loglik_oracle,
    smoothed_oracle,
    transition_tensor,
)
from tvtp.model import Dataset, ModelSpec, ParamVector, SpecError


def test_initial_distribution():
    spec = ModelSpec(J=2, d=2)
    np.testing.assert_array_equal(initial_distribution(spec, 2), [0, 0, 1, 0])
    np.testing.assert_array_equal(initial_distribution(spec, "uniform"), [0.25] * 4)
    with pytest.raises(SpecError):
        initial_distribution(spec, 4)


def test_single_regime_is_gaussian_ar():
    spec = ModelSpec(k=2, J=1, d=1)
    theta = ParamVector.from_flat(spec, [0.7, 0.4, -0.2, 1.3])
    rng = np.random.default_rng(0)
    y = rng.normal(size=52)
    data = Dataset.for_spec(spec, y)
    resid = y[2:] - 0.7 - 0.4 * (y[1:-1] - 0.7) + 0.2 * (y[:-2] - 0.7)
    expect = stats.norm.logpdf(resid, scale=1.3).sum()
    assert loglik(spec, theta, data) == pytest.approx(expect, rel=1e-13)


@pytest.mark.parametrize("family", ["constant", "logistic", "probit", "latent_factor"])
def test_filter_matches_enumeration(family):
    rng = np.random.default_rng(["constant", "logistic", "probit", "latent_factor"].index(family))
    for _ in range(5):
        spec, theta, data = random_instance(rng, n=6, family=family)
        for s0 in (0, spec.n_states - 1, "uniform"):
            got = loglik(spec, theta, data, s0)
            want = loglik_oracle(spec, theta, data, s0)
            assert got == pytest.approx(want, rel=1e-11)


@pytest.mark.parametrize("family", ["constant", "logistic", "latent_factor"])
def test_smoother_matches_enumeration(family):
    rng = np.random.default_rng(7)
    spec, theta, data = random_instance(rng, n=5, family=family)
    fr = forward_filter(spec, theta, data, 1)
    sm = kim_smoother(spec, theta, data, fr)
    np.testing.assert_allclose(sm.smoothed, smoothed_oracle(spec, theta, data, 1), atol=1e-12)
    np.testing.assert_allclose(sm.regimes.sum(axis=1), 1.0, atol=1e-12)
    # the last smoothed marginal is the last filtered one
    np.testing.assert_allclose(sm.smoothed[-1], fr.filtered[-1], atol=1e-15)


def test_filtered_and_predicted_are_distributions():
    rng = np.random.default_rng(3)
    spec, theta, data = random_instance(rng, n=40, family="logistic")
    fr = forward_filter(spec, theta, data, "uniform")
    np.testing.assert_allclose(fr.filtered.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(fr.predicted.sum(axis=1), 1.0, atol=1e-12)
    assert fr.period_logdens.sum() == pytest.approx(fr.loglik)


def test_batch_matches_single_rows():
    rng = np.random.default_rng(4)
    spec, theta, data = random_instance(rng, n=30, family="probit")
    thetas = [random_theta(spec, rng) for _ in range(5)]
    batch = batch_period_logdens(spec, np.array([t.to_flat() for t in thetas]), data, 0)
    for b, t in enumerate(thetas):
        np.testing.assert_allclose(batch[b], forward_filter(spec, t, data, 0).period_logdens, rtol=1e-13)


def test_long_series_does_not_underflow():
    spec = ModelSpec(k=0, J=2, d=1)
    theta = ParamVector.from_flat(spec, [-3.0, 3.0, 1.0, 0.95, 0.05])
    y = np.random.default_rng(0).normal(size=20_000)
    ll = loglik(spec, theta, Dataset.for_spec(spec, y))
    assert np.isfinite(ll) and ll < -20_000


def test_zero_likelihood_is_reported():
    spec = ModelSpec(k=0, J=2, d=1)
    theta = ParamVector.from_flat(spec, [0.0, 1.0, 1.0, 0.9, 0.1])
    data = Dataset.for_spec(spec, [0.0, 1e200, 0.5])
    with pytest.raises(ZeroLikelihoodError):
        forward_filter(spec, theta, data)
    ld = batch_period_logdens(spec, theta.to_flat(), data)
    assert ld[0, 1] == -np.inf


def test_absorbing_regime():
    # with an absorbing first regime and s0 in it, the data can only come from regime 1
    spec = ModelSpec(k=0, J=2, d=1)
    theta = ParamVector.from_flat(spec, [-1.0, 2.0, 0.8, 1.0, 0.3])
    y = np.array([0.1, -2.0, 1.5])
    ll = loglik(spec, theta, Dataset.for_spec(spec, y), 0)
    assert ll == pytest.approx(stats.norm.logpdf(y, -1.0, 0.8).sum(), rel=1e-14)


def test_transition_tensor_shape(design):
    spec, theta = design
    rng = np.random.default_rng(0)
    data = Dataset.for_spec(spec, rng.normal(size=24), rng.normal(size=(20, 1)))
    Q = transition_tensor(spec, theta, data)
    assert Q.shape == (20, 32, 2)
    np.testing.assert_allclose(Q.sum(axis=2), 1.0)
