import math

import numpy as np
import pytest

from implied_ddp.ddp_sampler import Faults
from implied_ddp.validation import crp, diagnostics, moments, synthetic
from implied_ddp.validation.gaussian_oracle import OracleError, gaussian_oracle
from implied_ddp.validation.geweke import GewekeConfig, geweke_test, prior_draw, statistics, _cross_pairs, _obs_day
from implied_ddp.validation.report import check_gelman_rubin, check_parity, random_dlm_instance
from implied_ddp import dlm


def test_bell_numbers():
    assert [len(list(crp.set_partitions(n))) for n in range(1, 7)] == [1, 2, 5, 15, 52, 203]


def test_exact_partition_probs_sum_and_pair():
    for a in (0.5, 1.0, 2.0):
        p = crp.exact_partition_probs(4, a)
        assert sum(p.values()) == pytest.approx(1.0, abs=1e-12)
        two = crp.exact_partition_probs(2, a)
        assert two[(0, 0)] == pytest.approx(1 / (1 + a))


def test_canonical_and_tv():
    assert crp.canonical([5, 5, 2, 7]) == (0, 0, 1, 2)
    assert crp.total_variation({(0,): 1.0}, {(0,): 0.5, (1,): 0.5}) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        crp.exact_partition_probs(crp.MAX_N + 1, 1.0)


def test_crp_check_small(rng):
    r = crp.crp_check(1.0, 3, 20_000, rng)
    assert r.tv < 0.03
    bad = crp.crp_check(1.0, 3, 20_000, rng, Faults.only("urn_ignores_sizes"))
    assert bad.tv > r.tv


def test_gelman_rubin_hand_example():
    assert diagnostics.gelman_rubin([[1, 2, 3, 4], [2, 3, 4, 5]]) == pytest.approx(math.sqrt(1.2), abs=1e-15)
    assert check_gelman_rubin().passed


def test_gelman_rubin_edge_cases(rng):
    assert math.isnan(diagnostics.gelman_rubin([[1, 1, 1], [1, 1, 1]]))
    with pytest.raises(ValueError):
        diagnostics.gelman_rubin([[1, 2, 3]])
    shifted = [rng.normal(size=1000), rng.normal(5, 1, size=1000)]
    assert diagnostics.gelman_rubin(shifted) > 2


def test_batch_means_se_iid(rng):
    x = rng.normal(size=100_000)
    assert diagnostics.batch_means_se(x) == pytest.approx(1 / math.sqrt(x.size), rel=0.25)


def test_oracle_rejects_large_problems():
    spec = dlm.ar1_spec(0.5, 1.0, 70)
    with pytest.raises(OracleError):
        gaussian_oracle(spec, [dlm.ObsBlock.empty(1)] * 71, np.ones(71))


def test_oracle_prior_matches_prior_moments(rng):
    spec, obs, vol = random_dlm_instance(rng, p=2, T=4)
    ref = gaussian_oracle(spec, obs, vol)
    for t in range(5):
        mean, cov = dlm.prior_moments(spec, t)
        np.testing.assert_allclose(ref.prior_mean[t], mean, atol=1e-10)
        np.testing.assert_allclose(ref.prior_cov[t], cov, atol=1e-10)


def test_parity_check_passes(rng):
    assert check_parity(rng, 1000).passed


def test_stick_weights(rng):
    w = synthetic.stick_weights(1.0, rng)
    assert 1 - w.sum() < 1e-10
    with pytest.raises(synthetic.SimulationError):
        synthetic.stick_weights(1e6, rng)


def test_stationary_paths_moments(rng):
    x = synthetic.stationary_paths(-7.0, 0.9, 0.5, 10, 50_000, rng)
    assert x.shape == (50_000, 11)
    v = 0.5 / (1 - 0.81)
    assert np.mean(x[:, 5]) == pytest.approx(-7.0, abs=4 * math.sqrt(v / 50_000))
    assert np.var(x[:, 10]) == pytest.approx(v, rel=0.03)
    assert np.corrcoef(x[:, 3], x[:, 4])[0, 1] == pytest.approx(0.9, abs=0.01)


def test_market_shaped_panel(rng):
    spec = synthetic.market_shaped_spec(rng)
    panel, truth = synthetic.simulate_panel(spec, rng)
    assert panel.T == 306 and panel.counts.max() <= 26 and panel.counts.min() >= 0
    assert 3000 < panel.n < 5000
    assert np.any(panel.counts == 0)
    meta = truth.to_json(spec)
    assert '"mu": -7.0' in meta


def test_moments_small(rng):
    checks, printed = moments.prior_moment_checks(moments.MomentSetup(), 40_000, rng)
    for c in checks.values():
        assert abs(c.z) < 4.5, c
    assert printed.z > 4


def test_product_formula_values():
    pf = moments.product_formula([0, 5, 5], 0.9, 10.0, 2.0)
    assert pf[0] == pytest.approx(20 / 9)
    assert pf[1] == pytest.approx(pf[0] * (4.5 - 0.9) / (4.5 - 1))


def test_geweke_statistics_shape(rng):
    cfg = GewekeConfig()
    hyper, z, atoms, sigma2, y = prior_draw(cfg, rng)
    stats_ = statistics(hyper, atoms, sigma2, y, _cross_pairs(_obs_day(cfg)))
    assert stats_.shape == (10,)
    assert stats_[5] == atoms.shape[0]


def test_geweke_short_run_and_fault(rng):
    ok = geweke_test(GewekeConfig(iterations=3000), rng)
    assert ok.max_abs_z < 5
    bad = geweke_test(GewekeConfig(iterations=3000), rng, Faults.only("printed_sv_scale"))
    assert bad.max_abs_z > 6
