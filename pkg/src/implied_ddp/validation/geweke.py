"""Joint-distribution test of the full sampler.

The marginal-conditional simulator draws parameters from the prior and then
data; the successive-conditional simulator alternates one Gibbs scan with a
fresh data draw. Both target the same joint law, so test-function means must
agree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..ddp_sampler import DDPSampler, Hyperparams, NO_FAULTS, Priors, SamplerError
from ..market_data import TradePanel
from ..volatility import VolatilityError, simulate_variance_path
from .diagnostics import batch_means_se
from .synthetic import stationary_paths

GEWEKE_PRIORS = Priors(
    mu_mean=0.0, mu_var=1.0, a_U=10.0, b_U=10.0, a_alpha=1.0, b_alpha=1.0,
    s0=40.0, S0=1.0, rho_grid_size=9, delta_grid=(0.7, 0.8, 0.9, 0.99),
)

TEST_FUNCTIONS = ("mu", "U", "rho", "delta", "sigma2_1", "L", "mean_y", "mean_y2", "cross_day", "rho_init")


@dataclass(frozen=True)
class GewekeConfig:
    T: int = 3
    per_day: int = 2
    iterations: int = 50_000
    batches: int = 50
    priors: Priors = GEWEKE_PRIORS

    def __post_init__(self):
        if self.T > 3 or self.per_day > 2 or self.T < 2 or self.per_day < 1:
            raise ValueError("Geweke test is meant for 2 <= T <= 3 and 1 <= n_t <= 2")


@dataclass
class GewekeResult:
    names: tuple
    z: np.ndarray
    mc_mean: np.ndarray
    sc_mean: np.ndarray
    iterations: int
    failed: bool = False
    note: str = ""

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    def as_dict(self):
        return {n: float(v) for n, v in zip(self.names, self.z)}


def _obs_day(cfg):
    return np.repeat(np.arange(1, cfg.T + 1), cfg.per_day)


def _crp(n, alpha, rng):
    z = np.zeros(n, dtype=np.int64)
    sizes = []
    for i in range(n):
        w = np.array(sizes + [alpha], dtype=float)
        k = int(rng.choice(w.size, p=w / w.sum()))
        if k == len(sizes):
            sizes.append(1)
        else:
            sizes[k] += 1
        z[i] = k
    return z, len(sizes)


def prior_draw(cfg: GewekeConfig, rng):
    pr = cfg.priors
    day = _obs_day(cfg)
    alpha = pr.alpha_fixed if pr.alpha_fixed is not None else rng.gamma(pr.a_alpha) / pr.b_alpha
    z, L = _crp(day.size, alpha, rng)
    mu = pr.mu_mean + math.sqrt(pr.mu_var) * rng.standard_normal()
    U = (pr.b_U / 2) / rng.gamma(pr.a_U / 2)
    grid = pr.rho_grid
    w = np.exp(-0.5 * grid**2)
    rho = float(grid[rng.choice(grid.size, p=w / w.sum())])
    delta = float(pr.delta_grid[rng.integers(len(pr.delta_grid))])
    atoms = stationary_paths(mu, rho, U, cfg.T, L, rng)
    counts = np.concatenate([[0], np.full(cfg.T, cfg.per_day)])
    sigma2 = simulate_variance_path(counts, delta, pr.s0, pr.S0, rng)
    y = atoms[z, day] + np.sqrt(sigma2[day]) * rng.standard_normal(day.size)
    hyper = Hyperparams(mu=mu, rho=rho, U=U, delta=delta, alpha=alpha)
    return hyper, z, atoms, sigma2, y


def _cross_pairs(day):
    i, j = np.triu_indices(day.size, 1)
    keep = day[i] != day[j]
    return i[keep], j[keep]


def statistics(hyper, atoms, sigma2, y, pairs):
    """Test functions; ``rho_init`` is rho times the standardized squared
    initial-state deviation, which has mean zero under the prior."""
    c = y - hyper.mu
    rho = hyper.rho
    init = np.mean((atoms[:, 0] - hyper.mu) ** 2) * (1 - rho * rho) / hyper.U
    return np.array([
        hyper.mu, hyper.U, rho, hyper.delta, sigma2[1], atoms.shape[0],
        float(np.mean(y)), float(np.mean(y * y)), float(np.mean(c[pairs[0]] * c[pairs[1]])), rho * init,
    ])


def geweke_test(cfg: GewekeConfig = GewekeConfig(), rng=None, faults=NO_FAULTS) -> GewekeResult:
    rng = rng if rng is not None else np.random.default_rng()
    N = cfg.iterations
    mc = np.empty((N, len(TEST_FUNCTIONS)))
    pairs = _cross_pairs(_obs_day(cfg))
    for j in range(N):
        hyper, z, atoms, sigma2, y = prior_draw(cfg, rng)
        mc[j] = statistics(hyper, atoms, sigma2, y, pairs)

    hyper, z, atoms, sigma2, y = prior_draw(cfg, rng)
    day = _obs_day(cfg)
    panel = TradePanel(tuple(range(cfg.T)), tuple(y[day == t] for t in range(1, cfg.T + 1)))
    sampler = DDPSampler(panel, cfg.priors, rng, faults, hyper=hyper)
    st = sampler.state
    st.relabel(z)
    st.paths[: st.L] = atoms
    sampler.sigma2 = sigma2
    sc = np.empty_like(mc)
    note = ""
    try:
        for j in range(N):
            sampler.iterate()
            h = sampler.hyper
            y = st.paths[st.z, st.obs_day] + np.sqrt(sampler.sigma2[st.obs_day]) * rng.standard_normal(st.n)
            st.set_values(y)
            sc[j] = statistics(h, sampler.atoms, sampler.sigma2, st.obs_y, pairs)
    except (SamplerError, VolatilityError, FloatingPointError, ValueError) as exc:
        # a chain that breaks down is itself evidence of a defect
        note = f"successive-conditional chain stopped at iteration {j}: {exc}"
        z_scores = np.full(len(TEST_FUNCTIONS), np.inf)
        return GewekeResult(TEST_FUNCTIONS, z_scores, mc.mean(0), sc[:j].mean(0) if j else sc[:1], j, True, note)

    m1, m2 = mc.mean(axis=0), sc.mean(axis=0)
    se1 = mc.std(axis=0, ddof=1) / math.sqrt(N)
    se2 = np.array([batch_means_se(sc[:, k], cfg.batches) for k in range(sc.shape[1])])
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = (m1 - m2) / np.sqrt(se1**2 + se2**2)
    zs = np.where(np.isfinite(zs), zs, np.where(m1 == m2, 0.0, np.inf))
    return GewekeResult(TEST_FUNCTIONS, zs, m1, m2, N, note=note)
