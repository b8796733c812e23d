"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Criteria 8 and 10 run full-size chains and take most of the time.
"""
import json
import math
import time

import mpmath
import numpy as np
import pytest
from scipy import special, stats

from implied_ddp import dlm
from implied_ddp.cli import main as cli_main
from implied_ddp.ddp_sampler import (
    ChainConfig,
    Faults,
    Hyperparams,
    Priors,
    U_conditional,
    alpha_mixture,
    mu_conditional,
    read_draws,
    rho_conditional,
    run_chain,
    update_U,
    update_alpha,
    update_mu,
    update_rho,
)
from implied_ddp.density import Mixture, density_from_mixture, mixture_for_day, read_densities
from implied_ddp.market_data import write_panel
from implied_ddp.validation import crp
from implied_ddp.validation.diagnostics import gelman_rubin
from implied_ddp.validation.gaussian_oracle import gaussian_oracle
from implied_ddp.validation.geweke import GewekeConfig, geweke_test
from implied_ddp.validation.moments import MomentSetup, prior_moment_checks
from implied_ddp.validation.report import check_parity, check_sv_conjugacy, dlm_max_error, random_dlm_instance
from implied_ddp.validation.synthetic import market_shaped_spec, simulate_panel


def seeded(n):
    return np.random.default_rng(np.random.SeedSequence([2024, n]))


# 1 -------------------------------------------------------------------------

def test_parity_exactness(verdict):
    t0 = time.perf_counter()
    res = check_parity(seeded(1), size=10_000)
    dt = time.perf_counter() - t0
    verdict("criterion 1 parity", res.passed and dt < 1.0,
            f"max rel err {res.statistic:.2e} (<= 1e-12), {dt:.2f}s (< 1s)")


# 2 -------------------------------------------------------------------------

def test_dlm_oracle_equivalence(verdict):
    rng = seeded(2)
    t0 = time.perf_counter()
    err = 0.0
    for _ in range(200):
        spec, obs, vol = random_dlm_instance(rng)
        assert spec.p <= 2 and spec.T <= 6
        err = max(err, dlm_max_error(spec, obs, vol))

    spec, obs, vol = random_dlm_instance(rng, p=2, T=6)
    filt = dlm.forward_filter(spec, obs, vol)
    ref = gaussian_oracle(spec, obs, vol)
    N = 100_000
    paths = dlm.backward_sample(filt, spec, rng, size=N).reshape(N, -1)
    mean, var = paths.mean(axis=0), paths.var(axis=0, ddof=1)
    tv = np.diag(ref.joint_cov)
    z_mean = np.abs(mean - ref.joint_mean.reshape(-1)) / np.sqrt(tv / N)
    c = paths - mean
    z_var = np.abs(var - tv) / np.sqrt((np.mean(c**4, axis=0) - var**2) / N)
    dt = time.perf_counter() - t0
    ok = err <= 1e-8 and z_mean.max() <= 3 and z_var.max() <= 3 and dt < 120
    verdict("criterion 2 DLM/oracle", ok,
            f"max moment err {err:.1e} (<= 1e-8); backward-sample max |z| mean {z_mean.max():.2f}, "
            f"var {z_var.max():.2f} (<= 3); {dt:.1f}s")


# 3 -------------------------------------------------------------------------

def test_sv_conjugacy(verdict):
    t0 = time.perf_counter()
    res = check_sv_conjugacy(seeded(3))
    dt = time.perf_counter() - t0
    verdict("criterion 3 SV conjugacy", res.passed and dt < 10,
            f"rel err {res.statistic:.1e} (<= 1e-10), constant path, {dt:.2f}s")


# 4 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def moment_checks():
    t0 = time.perf_counter()
    checks, printed = prior_moment_checks(MomentSetup(), 1_000_000, seeded(4))
    return checks, printed, time.perf_counter() - t0


def test_prior_moment_identities(moment_checks, verdict):
    checks, _, dt = moment_checks
    worst = max(checks.values(), key=lambda c: abs(c.z))
    ok = all(c.passed for c in checks.values()) and dt < 300
    verdict("criterion 4 prior moments", ok,
            f"{len(checks)} identities, max |z| {abs(worst.z):.2f} ({worst.name}) (<= 3); {dt:.0f}s")


@pytest.mark.xfail(strict=True, reason="printed V(y) omits the between-atom variance; see ledger")
def test_printed_variance_expression(moment_checks, verdict):
    _, printed, _ = moment_checks
    verdict("criterion 4 printed V(y) expression", printed.passed,
            f"MC {printed.estimate:.4f} vs {printed.target:.4f}, z {printed.z:.1f} (<= 3)")


# 5 -------------------------------------------------------------------------

def test_urn_correctness(verdict):
    rng = seeded(5)
    t0 = time.perf_counter()
    tvs, pairs = {}, {}
    for a in (0.5, 1.0, 2.0):
        tvs[a] = crp.crp_check(a, 4, 100_000, rng).tv
        pairs[a] = crp.crp_check(a, 2, 100_000, rng).co_cluster() - 1 / (1 + a)
    dt = time.perf_counter() - t0
    ok = max(tvs.values()) < 0.02 and max(abs(v) for v in pairs.values()) <= 0.01 and dt < 120
    verdict("criterion 5 urn", ok,
            "TV " + ", ".join(f"a={a}: {v:.4f}" for a, v in tvs.items()) + " (< 0.02); pair err "
            + ", ".join(f"{v:+.4f}" for v in pairs.values()) + f" (<= 0.01); {dt:.0f}s")


# 6 -------------------------------------------------------------------------

def test_geweke(verdict):
    t0 = time.perf_counter()
    base = geweke_test(GewekeConfig(iterations=50_000), seeded(6))
    fault_z = {}
    for k, name in enumerate(Faults.names()):
        fault_z[name] = geweke_test(GewekeConfig(iterations=50_000), seeded(60 + k), Faults.only(name)).max_abs_z
    dt = time.perf_counter() - t0
    ok = base.max_abs_z < 4 and min(fault_z.values()) > 6 and dt < 900
    verdict("criterion 6 Geweke", ok,
            f"correct max |z| {base.max_abs_z:.2f} (< 4); faults "
            + ", ".join(f"{n} {z:.1f}" for n, z in fault_z.items()) + f" (> 6); {dt:.0f}s")


# 7 -------------------------------------------------------------------------

ATOMS = np.array([[-1.2, -0.7, -0.9, -0.2], [0.8, 1.1, 0.4, 0.9]])
HYPER7 = dict(mu=0.1, rho=0.6, U=0.5, delta=0.9, alpha=1.0)
PRIORS7 = Priors(mu_mean=0.0, mu_var=4.0, a_U=3.0, b_U=2.0, a_alpha=2.0, b_alpha=1.0)


def path_loglik(mu, rho, U):
    """Stationary AR(1) log density of ATOMS by dense multivariate normal."""
    T1 = ATOMS.shape[1]
    lag = np.abs(np.subtract.outer(np.arange(T1), np.arange(T1)))
    cov = U / (1 - rho**2) * rho**lag
    return float(sum(stats.multivariate_normal(np.full(T1, mu), cov).logpdf(row) for row in ATOMS))


def grid_density(logp, grid):
    p = np.exp(logp - logp.max())
    return p / np.trapezoid(p, grid)


def tv_continuous(p, q, grid):
    return 0.5 * float(np.trapezoid(np.abs(p - q), grid))


def cdf_from_grid(p, grid):
    c = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(grid))])
    return lambda x: np.interp(x, grid, c / c[-1])


def quartile_tv(draws, cdf):
    # noise floor for 4 equiprobable bins and 1e6 draws is about 7e-4
    edges = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    u = cdf(draws)
    counts = np.histogram(u, bins=edges)[0] / draws.size
    return 0.5 * float(np.sum(np.abs(counts - 0.25)))


def test_hyperparameter_conditionals(verdict):
    rng = seeded(7)
    N = 1_000_000
    t0 = time.perf_counter()
    h = Hyperparams(**HYPER7)
    out = {}

    # mu
    g = np.linspace(-10, 10, 8001)
    ll = np.array([path_loglik(m, h.rho, h.U) for m in g])
    oracle = grid_density(stats.norm.logpdf(g, 0.0, 2.0) + ll, g)
    mean, var = mu_conditional(ATOMS, h, PRIORS7)
    tv = tv_continuous(stats.norm.pdf(g, mean, math.sqrt(var)), oracle, g)
    draws = np.array([update_mu(ATOMS, h, PRIORS7, rng) for _ in range(N)])
    cdf = cdf_from_grid(oracle, g)
    out["mu"] = (tv, stats.kstest(draws, cdf).pvalue, quartile_tv(draws, cdf))

    # U
    g = np.linspace(1e-3, 12, 8000)
    ll = np.array([path_loglik(h.mu, h.rho, u) for u in g])
    oracle = grid_density(stats.invgamma.logpdf(g, 1.5, scale=1.0) + ll, g)
    shape, rate = U_conditional(ATOMS, h, PRIORS7)
    tv = tv_continuous(stats.invgamma.pdf(g, shape, scale=rate), oracle, g)
    draws = np.array([update_U(ATOMS, h, PRIORS7, rng) for _ in range(N)])
    cdf = cdf_from_grid(oracle, g)
    out["U"] = (tv, stats.kstest(draws, cdf).pvalue, quartile_tv(draws, cdf))

    # rho on the sampler's grid
    grid = PRIORS7.rho_grid
    lo = stats.norm.logpdf(grid) + np.array([path_loglik(h.mu, r, h.U) for r in grid])
    oracle = np.exp(lo - lo.max())
    oracle /= oracle.sum()
    tv = 0.5 * float(np.sum(np.abs(rho_conditional(ATOMS, h, PRIORS7) - oracle)))
    draws = np.array([update_rho(ATOMS, h, PRIORS7, rng) for _ in range(N)])
    idx = np.rint((draws + 1) * (grid.size + 1) / 2).astype(int) - 1
    counts = np.bincount(idx, minlength=grid.size)
    expected = oracle * N
    big = expected >= 5
    obs = np.append(counts[big], counts[~big].sum())
    exp_ = np.append(expected[big], expected[~big].sum())
    chi = stats.chisquare(obs, exp_)
    cdf_rho = np.cumsum(oracle)
    emp = np.histogram(np.interp(draws, grid, cdf_rho), bins=[0, 0.25, 0.5, 0.75, 1.0 + 1e-12])[0] / N
    ref = np.histogram(np.interp(grid, grid, cdf_rho), bins=[0, 0.25, 0.5, 0.75, 1.0 + 1e-12], weights=oracle)[0]
    out["rho"] = (tv, chi.pvalue, 0.5 * float(np.sum(np.abs(emp - ref))))

    # alpha: chain of update_alpha, Rao-Blackwellised over the auxiliary draw
    L, n = 3, 10
    g = np.linspace(1e-4, 20, 1001)
    oracle = grid_density(stats.gamma.logpdf(g, 2.0, scale=1.0) + L * np.log(g) + special.gammaln(g)
                          - special.gammaln(g + n), g)
    a = 1.0
    rb = np.zeros_like(g)
    chain = np.empty(N)
    logg = np.log(g)
    chunk = 20_000
    buf_w, buf_r = np.empty(chunk), np.empty(chunk)
    shapes = alpha_mixture(L, n, 0.5, PRIORS7)[1]
    for j in range(N):
        eta = rng.beta(a + 1.0, n)
        w, _, rate = alpha_mixture(L, n, eta, PRIORS7)
        buf_w[j % chunk], buf_r[j % chunk] = w[0], rate
        a = update_alpha(a, L, n, PRIORS7, rng)
        chain[j] = a
        if j % chunk == chunk - 1:
            lr = np.log(buf_r)[:, None]
            d0 = np.exp(shapes[0] * lr + (shapes[0] - 1) * logg - buf_r[:, None] * g - special.gammaln(shapes[0]))
            d1 = np.exp(shapes[1] * lr + (shapes[1] - 1) * logg - buf_r[:, None] * g - special.gammaln(shapes[1]))
            rb += (buf_w[:, None] * d0 + (1 - buf_w[:, None]) * d1).sum(axis=0)
    rb /= N
    cdf = cdf_from_grid(oracle, g)
    out["alpha"] = (tv_continuous(rb, oracle, g), stats.kstest(chain[::20], cdf).pvalue, quartile_tv(chain, cdf))

    dt = time.perf_counter() - t0
    ok = all(v[0] <= 1e-3 and v[1] > 1e-3 for v in out.values()) and dt < 600
    verdict("criterion 7 conditionals", ok,
            "; ".join(f"{k} TV {v[0]:.1e} p {v[1]:.3f} quartile-TV {v[2]:.1e}" for k, v in out.items())
            + f" (TV <= 1e-3, p > 1e-3); {dt:.0f}s")


# 8 -------------------------------------------------------------------------

def test_limit_single_cluster(verdict):
    rng = seeded(8)
    spec = market_shaped_spec(rng)
    panel, _ = simulate_panel(spec, rng)
    t0 = time.perf_counter()
    draws = list(run_chain(panel, ChainConfig(1000, 4000, store_atoms=False), seed=8,
                           priors=Priors(alpha_fixed=1e-6)))
    dt = time.perf_counter() - t0
    frac = float(np.mean([d.L == 1 for d in draws]))
    verdict("criterion 8 alpha -> 0", frac >= 0.99 and dt < 300,
            f"L = 1 in {100 * frac:.2f}% of {len(draws)} kept (>= 99%), n={panel.n}, {dt:.0f}s")


# 9 -------------------------------------------------------------------------

HAND_CASES = [
    ([0.6, 0.4], [-10.0, 0.0], [4.0, 4.0]),
    ([0.3, 0.7], [-7.0, -6.5], [0.25, 9.0]),
    ([0.999, 0.001], [2.0, -30.0], [1.0, 0.04]),
]


def mp_mixture_pdf(w, m, v, y):
    mpmath.mp.dps = 40
    return float(sum(mpmath.mpf(wi) * mpmath.npdf(mpmath.mpf(y), mpmath.mpf(mi), mpmath.sqrt(mpmath.mpf(vi)))
                     for wi, mi, vi in zip(w, m, v)))


def test_density_normalisation(tmp_path, verdict):
    rng = seeded(9)
    spec = market_shaped_spec(rng, T=40)
    panel, _ = simulate_panel(spec, rng)
    write_panel(panel, tmp_path / "panel.csv")
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"out = {tmp_path}\npanel = {tmp_path / 'panel.csv'}\nburn_in = 300\nkept = 300\nthin = 3\n")
    assert cli_main(["fit", "--config", str(cfg)]) == 0
    assert cli_main(["density", "--config", str(cfg)]) == 0
    assert cli_main(["predict", "--config", str(cfg), "--k", "3"]) == 0
    emitted = read_densities(tmp_path / "density.csv") + read_densities(tmp_path / "predict.csv")
    worst_int = max(abs(e.integral() - 1) for e in emitted)

    draws = read_draws(tmp_path / "draws_chain1.jsonl")
    worst_mean = 0.0
    for t in range(1, panel.T + 1):
        mix = mixture_for_day(draws, t)
        coarse = density_from_mixture(mix, t)
        fine = density_from_mixture(mix, t, grid=np.linspace(coarse.grid[0], coarse.grid[-1], 2 * coarse.grid.size))
        grid_err = abs(coarse.grid_mean() - fine.grid_mean()) + 1e-9 * (1 + math.sqrt(mix.variance))
        worst_mean = max(worst_mean, abs(coarse.grid_mean() - mix.mean) / (10 * grid_err))

    worst_hand = 0.0
    for w, m, v in HAND_CASES:
        mix = Mixture(np.array(w), np.array(m), np.array(v), 1)
        ys = np.linspace(-35, 10, 91)
        ref = np.array([mp_mixture_pdf(w, m, v, y) for y in ys])
        worst_hand = max(worst_hand, float(np.max(np.abs(mix.pdf(ys) - ref))))
    ok = worst_int <= 1e-3 and worst_mean <= 1 and worst_hand <= 1e-10
    verdict("criterion 9 densities", ok,
            f"{len(emitted)} densities, max |int - 1| {worst_int:.1e} (<= 1e-3); mean error / (10 x grid error) "
            f"{worst_mean:.2f} (<= 1); hand cases max abs err {worst_hand:.1e} (<= 1e-10)")


# 10 ------------------------------------------------------------------------

@pytest.mark.slow
def test_full_length_run(tmp_path, verdict):
    rng = seeded(10)
    spec = market_shaped_spec(rng)
    panel, _ = simulate_panel(spec, rng)
    write_panel(panel, tmp_path / "panel.csv")
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"out = {tmp_path}\npanel = {tmp_path / 'panel.csv'}\nburn_in = 5000\nkept = 20000\nthin = 10\n")
    t0 = time.perf_counter()
    assert cli_main(["fit", "--config", str(cfg)]) == 0
    fit_time = time.perf_counter() - t0
    assert cli_main(["summarize", "--config", str(cfg)]) == 0
    rows = (tmp_path / "summary.csv").read_text().splitlines()
    header, body = rows[0].split(","), [r.split(",") for r in rows[1:]]
    days = [int(r[0]) for r in body]
    empty = [t + 1 for t, c in enumerate(panel.counts) if c == 0]
    finite = all(math.isfinite(float(x)) for r in body for x in r[1:])
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    ok = (fit_time < 7200 and days == list(range(1, 307)) and set(empty) <= set(days) and finite
          and header == ["day_index", "mean", "median", "q25", "q75", "iqr", "p_below_-15"])
    verdict("criterion 10 full run", ok,
            f"T={panel.T}, n={panel.n}, 5000+20000 iterations in {fit_time / 60:.1f} min (< 120); "
            f"{len(days)} summary rows incl. {len(empty)} empty days; draws file thinned by 10 "
            f"({manifest['draw_files'][0]})")


@pytest.mark.slow
def test_coverage_replicates(verdict):
    cover = {"mu": 0, "rho": 0, "U": 0}
    t0 = time.perf_counter()
    R = 20
    for rep in range(R):
        rng = seeded(1000 + rep)
        spec = market_shaped_spec(rng)
        panel, _ = simulate_panel(spec, rng)
        draws = list(run_chain(panel, ChainConfig(1000, 4000, store_atoms=False), seed=rng.integers(2**32)))
        for k in cover:
            x = np.array([getattr(d, k) for d in draws])
            lo, hi = np.quantile(x, [0.05, 0.95])
            cover[k] += int(lo <= getattr(spec, k) <= hi)
    dt = time.perf_counter() - t0
    ok = all(c >= 0.8 * R for c in cover.values())
    verdict("criterion 10 coverage", ok,
            ", ".join(f"{k} {c}/{R}" for k, c in cover.items()) + f" (>= 16/20 each); {dt / 60:.0f} min")


# 11 ------------------------------------------------------------------------

def test_gelman_rubin(verdict):
    rng = seeded(11)
    r = gelman_rubin(rng.standard_normal((4, 100_000)))
    hand = gelman_rubin([[1, 2, 3, 4], [2, 3, 4, 5]])
    ok = 0.999 <= r <= 1.01 and hand == pytest.approx(math.sqrt(1.2), abs=1e-15)
    verdict("criterion 11 Gelman-Rubin", ok, f"iid R-hat {r:.5f} in [0.999, 1.01]; hand example {hand!r} = sqrt(1.2)")
