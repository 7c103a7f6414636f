import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from momentbayes.core import DataError, Hyperparameters, ThetaBox, ThetaPrior, make_interval_mean_model
from momentbayes.likelihood import (
    LogLikelihoodContext,
    LogPosterior,
    OrthantQuery,
    log_limited_likelihood,
    log_orthant_probability,
    log_posterior_unnorm,
    orthant_bounds,
    orthant_probability,
)

from conftest import exact_mean_interval_data


def random_spd(rng, p):
    a = rng.normal(size=(p, p))
    return a @ a.T + 0.3 * np.eye(p)


def test_orthant_simple_values():
    assert orthant_probability(OrthantQuery([0.0, 0.0], np.eye(2))) == pytest.approx(0.25, abs=1e-15)
    assert orthant_probability(OrthantQuery([1.6449], [[1.0]])) == pytest.approx(0.95, abs=5e-5)


def test_orthant_correlated_against_plain_mc_oracle():
    mean = np.array([0.5, 0.5])
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    est = orthant_probability(OrthantQuery(mean, cov, seed=3))
    rng = np.random.default_rng(12345)
    x = rng.multivariate_normal(mean, cov, size=1_000_000)
    oracle = np.mean(np.all(x >= 0, axis=1))
    se = math.sqrt(oracle * (1 - oracle) / 1_000_000) + math.sqrt(oracle * (1 - oracle) / 65_536)
    assert abs(est - oracle) <= 3 * se


def test_orthant_errors():
    with pytest.raises(DataError):
        OrthantQuery([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(DataError):
        orthant_probability(OrthantQuery([0.0, 0.0], [[1.0, 0.3], [0.3, 1.0]], method="diagonal-exact"))
    with pytest.raises(DataError):
        OrthantQuery([0.0], [[1.0]], mc_samples=0)


def test_bounds_examples():
    assert orthant_bounds([0.0, 0.0], np.eye(2)) == pytest.approx((0.0, 0.5))
    lo, hi = orthant_bounds([2.0], [[1.0]])
    assert lo == pytest.approx(norm.cdf(2.0)) and hi == pytest.approx(norm.cdf(2.0))
    lo, hi = orthant_bounds([3.0, 3.0, 3.0], np.eye(3))
    exact = norm.cdf(3.0) ** 3
    assert lo == pytest.approx(1 - 3 * norm.cdf(-3.0))
    assert hi == pytest.approx(norm.cdf(3.0))
    assert lo <= exact <= hi
    assert orthant_probability(OrthantQuery([3.0, 3.0, 3.0], np.eye(3))) == pytest.approx(exact, rel=1e-14)


def test_bound_sandwich_200_random_queries():
    rng = np.random.default_rng(2024)
    for i in range(200):
        p = int(rng.integers(1, 5))
        cov = random_spd(rng, p)
        mean = rng.normal(0.5, 1.5, p)
        lo, hi = orthant_bounds(mean, cov)
        est = orthant_probability(OrthantQuery(mean, cov, mc_samples=20_000, seed=i))
        assert lo - 1e-12 <= est <= hi + 1e-12


def test_diagonal_exact_matches_monte_carlo():
    rng = np.random.default_rng(7)
    for i in range(100):
        p = int(rng.integers(1, 5))
        cov = np.diag(rng.uniform(0.2, 3.0, p))
        mean = rng.normal(0.3, 1.0, p)
        exact = orthant_probability(OrthantQuery(mean, cov))
        mc = orthant_probability(OrthantQuery(mean, cov, method="monte-carlo", mc_samples=20_000, seed=i))
        se = math.sqrt(max(exact * (1 - exact), 1e-12) / 20_000)
        assert abs(mc - exact) <= 4 * se + 1e-12


def test_monte_carlo_bit_reproducible():
    cov = np.array([[1.0, 0.3], [0.3, 2.0]])
    a = log_orthant_probability([0.2, 0.4], cov, seed=9)
    b = log_orthant_probability([0.2, 0.4], cov, seed=9)
    assert a == b


def test_log_orthant_deep_tail_is_finite():
    v = log_orthant_probability([-40.0], [[1.0]])
    assert np.isfinite(v) and v == pytest.approx(norm.logcdf(-40.0), rel=1e-12)


def _ctx(data, psi=(0.1, 0.5), V=None):
    V = np.eye(2) if V is None else V
    return LogLikelihoodContext(make_interval_mean_model(), data, Hyperparameters(psi, V))


def test_hand_evaluated_likelihood(interval_data_5000):
    ctx = _ctx(interval_data_5000)
    n = 5000
    assert ctx.quad_term == pytest.approx(0.26 / (2 * n), rel=1e-12)
    assert ctx.log_psi_sum == pytest.approx(math.log(0.05), rel=1e-12)
    val = log_limited_likelihood(ctx, [2.5])
    log_p = val - (-1.5 + 0.26 / (2 * n) + math.log(0.05))
    assert -1e-6 <= log_p <= 0.0
    assert val == pytest.approx(-4.4957, abs=1e-3)


def test_likelihood_outside_region_is_tiny_but_finite(interval_data_5000):
    ctx = _ctx(interval_data_5000)
    n = 5000
    val = log_limited_likelihood(ctx, [-1.0])
    # second moment mean is -1 - 0.5/n with sd 1/sqrt(n); ignore the (<= 0) first factor
    const = -(0.1 * 6.0 + 0.5 * -1.0) + 0.26 / (2 * n) + math.log(0.05)
    bound = norm.logcdf((-1.0 - 0.5 / n) * math.sqrt(n)) + const
    assert np.isfinite(val)
    assert val <= bound + 1e-9
    assert val < -2000


def test_likelihood_insensitive_to_v_scale_inside(interval_data_5000):
    a = log_limited_likelihood(_ctx(interval_data_5000), [2.5])
    b = log_limited_likelihood(_ctx(interval_data_5000, V=4 * np.eye(2)), [2.5])
    assert abs(a - b) <= 2e-3


def test_likelihood_ceiling_and_vectorisation(interval_data_5000):
    ctx = _ctx(interval_data_5000)
    thetas = np.linspace(-3, 8, 57)[:, None]
    batch = log_limited_likelihood(ctx, thetas)
    single = np.array([log_limited_likelihood(ctx, t) for t in thetas])
    assert np.allclose(batch, single, rtol=1e-13, atol=0)
    mbar = ctx.moment_mean(thetas)
    ceiling = -mbar @ ctx.hyper.psi + ctx.quad_term + ctx.log_psi_sum
    assert np.all(batch <= ceiling + 1e-12)


def test_cached_scalars_reproducible(interval_data_5000):
    ctx = _ctx(interval_data_5000, psi=(0.3, 0.2), V=np.array([[2.0, 0.4], [0.4, 1.0]]))
    psi, V, n = ctx.hyper.psi, ctx.hyper.V, ctx.n
    assert ctx.quad_term == pytest.approx(psi @ V @ psi / (2 * n), rel=1e-12)
    assert ctx.log_psi_sum == pytest.approx(np.log(psi).sum(), rel=1e-12)
    assert np.allclose(ctx.A_bar, [[-1.0], [1.0]]) and np.allclose(ctx.b_bar, [5.0, 0.0], atol=1e-12)


@given(st.floats(-3, 3), st.floats(0, 2), st.integers(0, 1))
def test_orthant_term_monotone_in_moment_mean(m, shift, j):
    cov = np.eye(2) / 50
    base = np.array([m, 0.5])
    moved = base.copy()
    moved[j] += shift
    assert log_orthant_probability(moved, cov) >= log_orthant_probability(base, cov)


def test_posterior_flat_and_truncation(interval_data_5000):
    ctx = _ctx(interval_data_5000)
    box = ThetaBox([-5.0], [10.0])
    prior = ThetaPrior.flat(box)
    assert log_posterior_unnorm(ctx, prior, [2.0]) == pytest.approx(
        log_limited_likelihood(ctx, [2.0]) - math.log(15.0), rel=1e-14)
    assert log_posterior_unnorm(ctx, prior, [11.0]) == -np.inf
    vals = LogPosterior(ctx, prior)(np.array([[2.0], [11.0]]))
    assert vals[1] == -np.inf and np.isfinite(vals[0])


def test_normal_prior_difference(interval_data_5000):
    ctx = _ctx(interval_data_5000)
    prior = ThetaPrior.normal(ThetaBox([-5.0], [10.0]), [0.0], [0.5])
    diff = log_posterior_unnorm(ctx, prior, [2.5]) - log_posterior_unnorm(ctx, prior, [0.5])
    lik = log_limited_likelihood(ctx, [2.5]) - log_limited_likelihood(ctx, [0.5])
    assert diff == pytest.approx(lik + (0.5**2 - 2.5**2) / (2 * 0.25), rel=1e-12)


def test_general_v_uses_monte_carlo(interval_data_5000):
    V = np.array([[1.0, 0.3], [0.3, 1.0]])
    ctx = _ctx(interval_data_5000, V=V)
    assert not ctx.z_diagonal
    val = log_limited_likelihood(ctx, [2.5])
    assert val == pytest.approx(-1.5 + ctx.quad_term + ctx.log_psi_sum, abs=1e-4)
