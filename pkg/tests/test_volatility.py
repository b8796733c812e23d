import numpy as np
import pytest
from scipy import stats

from implied_ddp import volatility as V


def test_no_data_filter():
    f = V.filter_from_stats(np.zeros(6, dtype=int), np.zeros(6), 0.8, 1.0, 10.0)
    np.testing.assert_allclose(f.s, 0.8 ** np.arange(6))
    np.testing.assert_allclose(f.S, 10.0)


def test_defaults():
    assert V.DEFAULT_S0 == 1.0 and V.DEFAULT_SCALE0 == 10.0
    assert V.DEFAULT_DELTA_GRID == (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)


def test_delta_one_is_conjugate(rng):
    res = [np.zeros(0)] + [rng.normal(0, 3, size=k) for k in (2, 0, 5, 1, 3)]
    f = V.sv_forward_filter(res, 1.0, 2.0, 5.0)
    shape, rate = V.conjugate_posterior(res[1:], 2.0, 5.0)
    assert f.s[-1] / 2 == pytest.approx(shape, rel=1e-12)
    assert f.s[-1] * f.S[-1] / 2 == pytest.approx(rate, rel=1e-12)
    path = V.sv_backward_sample(f, rng)
    assert np.all(path == path[-1])


def test_final_time_draw_distribution(rng):
    f = V.filter_from_stats(np.array([0]), np.array([0.0]), 0.9, 3.0, 2.0)
    draws = np.array([V.sv_backward_sample(f, rng)[0] for _ in range(20_000)])
    p = stats.kstest(draws, stats.invgamma(1.5, scale=3.0).cdf).pvalue
    assert p > 0.01


def test_backward_support(rng):
    res = [np.zeros(0)] + [rng.normal(size=k) for k in (3, 0, 2, 4)]
    f = V.sv_forward_filter(res, 0.7)
    for _ in range(100):
        s2 = V.sv_backward_sample(f, rng)
        assert np.all(s2 > 0) and np.all(np.isfinite(s2))
        assert np.all(s2[:-1] < s2[1:] / 0.7)


def test_bad_delta():
    with pytest.raises(V.VolatilityError):
        V.filter_from_stats([0, 1], [0, 1], 1.5)
    with pytest.raises(V.VolatilityError):
        V.filter_from_stats([0, 1], [0, 1], 0.0)


def test_single_point_grid(rng):
    d, s2, _ = V.sample_delta(np.array([0, 2]), np.array([0, 1.0]), [0.7], rng)
    assert d == 0.7 and s2.shape == (2,)


def test_symmetric_grid():
    rng = np.random.default_rng(3)
    counts, sumsq = np.array([0, 0, 0]), np.zeros(3)
    picks = [V.sample_delta(counts, sumsq, [0.6, 0.9], rng)[0] for _ in range(10_000)]
    frac = np.mean(np.array(picks) == 0.6)
    assert abs(frac - 0.5) <= 3 * np.sqrt(0.25 / 10_000)


# Marginal likelihoods of residuals (0.7, -1.9) with s0=3, S0=2, by tensor
# Gauss-Jacobi (beta shocks) x generalized Gauss-Laguerre (initial precision)
# quadrature with 300 nodes per axis.
QUADRATURE = {0.5: 0.015837650310164104, 0.8: 0.020046788754164668, 0.95: 0.02130153292893108}


def test_delta_grid_matches_quadrature():
    grid = tuple(QUADRATURE)
    ll = V.delta_log_likelihoods([0, 1, 1], [0, 0.49, 3.61], grid, 3.0, 2.0)
    ref = np.array([QUADRATURE[d] for d in grid])
    np.testing.assert_allclose(np.exp(ll), ref, rtol=2e-5)
    np.testing.assert_allclose(V.delta_posterior([0, 1, 1], [0, 0.49, 3.61], grid, 3.0, 2.0), ref / ref.sum(), rtol=2e-5)


def test_expected_variance_matches_simulation(rng):
    counts = np.array([0, 5, 5, 5, 5])
    sims = V.simulate_variance_path(counts, 0.9, 12.0, 2.0, rng, size=400_000)
    ev = V.expected_variance(counts, 0.9, 12.0, 2.0)
    se = sims.std(axis=0) / np.sqrt(sims.shape[0])
    assert np.all(np.abs(sims.mean(axis=0) - ev) <= 3.5 * se)


def test_expected_variance_diverges():
    ev = V.expected_variance([0, 0, 0], 0.5, 1.0, 10.0)
    assert np.all(np.isinf(ev))


def test_printed_scale_differs():
    a = V.filter_from_stats([0, 3], [0, 4.0], 0.8, 1.0, 10.0)
    b = V.filter_from_stats([0, 3], [0, 4.0], 0.8, 1.0, 10.0, printed_scale=True)
    assert a.S[1] == pytest.approx((0.8 * 10 + 4) / 3.8)
    assert b.S[1] == pytest.approx((0.8 * 10 + 4) / 3.8)
    a = V.filter_from_stats([0, 3], [0, 4.0], 0.8, 2.0, 10.0)
    b = V.filter_from_stats([0, 3], [0, 4.0], 0.8, 2.0, 10.0, printed_scale=True)
    assert a.S[1] != b.S[1]
