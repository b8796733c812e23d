"""MCMC for the constant-weight DDP mixture of AR(1) location paths.

Each observation ``Delta_it`` is a draw from ``N(theta*_{l t}, sigma2_t)`` for
the cluster ``l`` it is allocated to; cluster paths follow a stationary
AR(1) around ``mu`` with persistence ``rho`` and innovation variance ``U``;
allocations follow the Polya urn with mass ``alpha``; ``sigma2_t`` follows
the discount volatility model of :mod:`implied_ddp.volatility`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Iterator

import numpy as np
from scipy import stats

from . import _kernels as K
from .market_data import TradePanel
from .volatility import DEFAULT_DELTA_GRID, sample_delta


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class Priors:
    """Fixed prior constants.

    ``U ~ IG(a_U/2, b_U/2)``, ``alpha ~ Gamma(a_alpha, rate b_alpha)``,
    ``mu ~ N(mu_mean, mu_var)``, ``rho`` truncated N(0, 1) on an interior grid
    of (-1, 1), ``delta`` uniform on ``delta_grid``, and
    ``sigma2_0 ~ IG(s0/2, s0 S0/2)``.
    """

    mu_mean: float = -10.0
    mu_var: float = 100.0
    a_U: float = 2.0
    b_U: float = 1.0
    a_alpha: float = 1.0
    b_alpha: float = 1.0
    s0: float = 1.0
    S0: float = 10.0
    rho_grid_size: int = 399
    delta_grid: tuple = DEFAULT_DELTA_GRID
    alpha_fixed: float | None = None

    def __post_init__(self):
        if self.mu_var < 0 or self.a_U <= 0 or self.b_U <= 0:
            raise ValueError("mu_var must be >= 0 and a_U, b_U positive")
        if self.a_alpha <= 0 or self.b_alpha <= 0 or self.s0 <= 0 or self.S0 <= 0:
            raise ValueError("a_alpha, b_alpha, s0 and S0 must be positive")
        if self.rho_grid_size < 1:
            raise ValueError("rho_grid_size must be >= 1")
        grid = tuple(float(d) for d in self.delta_grid)
        if not grid or any(not 0 < d <= 1 for d in grid):
            raise ValueError("delta_grid values must lie in (0, 1]")
        object.__setattr__(self, "delta_grid", grid)
        if self.alpha_fixed is not None and not self.alpha_fixed > 0:
            raise ValueError("alpha_fixed must be positive")

    @property
    def rho_grid(self) -> np.ndarray:
        g = self.rho_grid_size
        return -1.0 + 2.0 * np.arange(1, g + 1) / (g + 1)

    @classmethod
    def preset(cls, name: str, **overrides) -> "Priors":
        """``data_location`` (mean -10, var 100) or ``global_mean`` (0, 25)."""
        if name == "data_location":
            base = cls()
        elif name == "global_mean":
            base = cls(mu_mean=0.0, mu_var=25.0)
        else:
            raise ValueError(f"unknown prior preset {name!r}")
        return replace(base, **overrides)


@dataclass(frozen=True)
class Faults:
    """Deliberate sampler bugs, used only to check that validation catches them."""

    gain_sign_flip: bool = False
    drop_obs_variance: bool = False
    printed_sv_scale: bool = False
    urn_ignores_sizes: bool = False
    wrong_stationary_variance: bool = False

    @classmethod
    def names(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def only(cls, name):
        if name not in cls.names():
            raise ValueError(f"unknown fault {name!r}; choose from {cls.names()}")
        return cls(**{name: True})


NO_FAULTS = Faults()


def stationary_factor(rho, faults=NO_FAULTS):
    """Stationary state variance divided by U."""
    if faults.wrong_stationary_variance:
        return 1.0 / (1.0 - rho)
    return 1.0 / (1.0 - rho * rho)


@dataclass
class Hyperparams:
    mu: float
    rho: float
    U: float
    delta: float
    alpha: float

    def __post_init__(self):
        if not (self.U > 0 and self.alpha > 0 and -1 < self.rho < 1 and 0 < self.delta <= 1):
            raise ValueError(f"hyperparameters out of range: {self}")

    @classmethod
    def initial(cls, priors: Priors) -> "Hyperparams":
        a, b = priors.a_U / 2, priors.b_U / 2
        U = b / (a - 1) if a > 1 else float(stats.invgamma.median(a, scale=b))
        grid = np.asarray(priors.delta_grid)
        delta = float(grid[np.argmin(np.abs(grid - grid.mean()))])
        rg = priors.rho_grid
        rho = float(rg[np.argmin(np.abs(rg))])
        alpha = priors.alpha_fixed if priors.alpha_fixed is not None else priors.a_alpha / priors.b_alpha
        return cls(mu=priors.mu_mean, rho=rho, U=U, delta=delta, alpha=alpha)


class ClusterState:
    """Allocations plus per-cluster sufficient statistics and paths.

    Rows ``0..L-1`` of the per-cluster arrays are live; labels are
    contiguous and no live cluster is empty.
    """

    def __init__(self, obs_day, obs_y, T, labels=None):
        self.obs_day = np.ascontiguousarray(obs_day, dtype=np.int64)
        self.obs_y = np.ascontiguousarray(obs_y, dtype=float)
        self.T = int(T)
        n = self.obs_day.shape[0]
        cap = n + 1
        self.z = np.zeros(n, dtype=np.int64)
        self.counts = np.zeros((cap, T + 1), dtype=np.int64)
        self.sums = np.zeros((cap, T + 1))
        self.sizes = np.zeros(cap, dtype=np.int64)
        self.fa = np.zeros((cap, T + 1))
        self.fR = np.ones((cap, T + 1))
        self.bp = np.zeros((cap, T + 1))
        self.bq = np.zeros((cap, T + 1))
        self.paths = np.zeros((cap, T + 1))
        self.L = 0
        if n:
            self.relabel(np.zeros(n, dtype=np.int64) if labels is None else labels)

    @property
    def n(self):
        return self.z.shape[0]

    def relabel(self, labels):
        """Replace allocations, compacting labels to 0..L-1 by first use."""
        labels = np.asarray(labels)
        _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
        order = np.argsort(np.argsort(first))
        self.z[:] = order[inv.reshape(-1)]
        self.L = int(first.size)
        self._rebuild()

    def _rebuild(self):
        self.counts[:] = 0
        self.sums[:] = 0.0
        self.sizes[:] = 0
        if not self.n:
            return
        np.add.at(self.counts, (self.z, self.obs_day), 1)
        np.add.at(self.sums, (self.z, self.obs_day), self.obs_y)
        self.sizes[: self.L] = np.bincount(self.z, minlength=self.L)

    def set_values(self, values):
        self.obs_y[:] = values
        self.sums[:] = 0.0
        if self.n:
            np.add.at(self.sums, (self.z, self.obs_day), self.obs_y)

    def cluster_sizes(self):
        return self.sizes[: self.L].copy()

    def day_counts(self):
        """``n*_lt`` for live clusters, shape (L, T+1)."""
        return self.counts[: self.L].copy()

    def members(self, l):
        return np.flatnonzero(self.z == l)

    def check(self):
        L = self.L
        assert self.sizes[:L].sum() == self.n
        assert np.all(self.sizes[:L] > 0)
        assert np.all(self.sizes[L:] == 0) and np.all(self.counts[L:] == 0)
        if self.n:
            assert self.z.min() >= 0 and self.z.max() == L - 1
            assert np.array_equal(np.bincount(self.z, minlength=L), self.sizes[:L])
            assert np.array_equal(self.counts[:L].sum(axis=0), np.bincount(self.obs_day, minlength=self.T + 1))
            ref = np.zeros((L, self.T + 1))
            np.add.at(ref, (self.z, self.obs_day), self.obs_y)
            assert np.allclose(ref, self.sums[:L], atol=1e-8 * (1 + np.abs(ref).max()))

    def refresh(self, sigma2, hyper, faults=NO_FAULTS):
        c0 = hyper.U * stationary_factor(hyper.rho, faults)
        K.refresh_all(self.L, self.counts, self.sums, sigma2, hyper.mu, hyper.rho, hyper.U, c0,
                      self.fa, self.fR, self.bp, self.bq)

    def state_moments(self, l, t, sigma2, hyper):
        """Posterior mean/variance of ``theta*_lt`` given cluster l's current data.

        Valid after :meth:`refresh` with the same parameters.
        """
        mean, var = K.state_moments(l, t, self.counts, self.sums, sigma2, hyper.mu, self.fa, self.fR, self.bp, self.bq)
        return mean + hyper.mu, var


def gibbs_assign(i, state: ClusterState, sigma2, hyper: Hyperparams, rng: np.random.Generator,
                 faults=NO_FAULTS, neutral=False):
    """Reallocate observation ``i`` given all others (collapsed over paths).

    A freshly opened cluster gets a path drawn by FFBS from its single
    observation. Returns the new label of ``i``.
    """
    c0 = hyper.U * stationary_factor(hyper.rho, faults)
    state.refresh(sigma2, hyper, faults)
    logw = np.empty(state.counts.shape[0] + 1)
    L_before = state.L
    L = K.assign_one(i, rng.random(), state.obs_day, state.obs_y, state.z, state.counts, state.sums, state.sizes,
                     state.L, state.fa, state.fR, state.bp, state.bq, state.paths, sigma2, hyper.mu, hyper.rho,
                     hyper.U, hyper.alpha, c0, faults.drop_obs_variance, faults.urn_ignores_sizes, neutral, logw)
    if L < 0:
        raise SamplerError("all allocation weights vanished")
    state.L = L
    k = int(state.z[i])
    if state.sizes[k] == 1 and (L > L_before or L == L_before and k == L - 1):
        K.ffbs(k, state.counts, state.sums, sigma2, hyper.mu, hyper.rho, hyper.U, c0,
               rng.standard_normal(state.T + 1), faults.gain_sign_flip, state.paths[k])
    return k


def sweep(state: ClusterState, sigma2, hyper: Hyperparams, rng, faults=NO_FAULTS, neutral=False):
    """Collapsed reallocation of every observation in random order.

    Paths of clusters opened during the sweep are not drawn here; nothing
    in the sweep reads them and :func:`resample_atoms` draws all paths next.
    """
    n = state.n
    if n == 0:
        return
    order = rng.permutation(n)
    u = rng.random(n)
    c0 = hyper.U * stationary_factor(hyper.rho, faults)
    L = K.sweep(order, u, state.obs_day, state.obs_y, state.z, state.counts, state.sums, state.sizes, state.L,
                state.fa, state.fR, state.bp, state.bq, state.paths, sigma2, hyper.mu, hyper.rho, hyper.U,
                hyper.alpha, c0, faults.drop_obs_variance, faults.urn_ignores_sizes, neutral)
    if L < 0:
        raise SamplerError("all allocation weights vanished")
    state.L = L


def sweep_conditional(state: ClusterState, sigma2, hyper: Hyperparams, rng):
    """Alternative reallocation scored with the sampled paths themselves."""
    n = state.n
    if n == 0:
        return
    order = rng.permutation(n)
    u = rng.random(n)
    normals = rng.standard_normal((n, state.T + 1))
    c0 = hyper.U * stationary_factor(hyper.rho)
    L = K.sweep_conditional(order, u, normals, state.obs_day, state.obs_y, state.z, state.counts, state.sums,
                            state.sizes, state.L, state.fa, state.fR, state.bp, state.bq, state.paths, sigma2,
                            hyper.mu, hyper.rho, hyper.U, hyper.alpha, c0)
    if L < 0:
        raise SamplerError("all allocation weights vanished")
    state.L = L


def tail_swap_moves(state: ClusterState, sigma2, hyper: Hyperparams, rng, faults=NO_FAULTS) -> int:
    """Collapsed Metropolis moves exchanging everything from day t onward
    between two random clusters, once for each t in 2..T.

    Single-observation moves cannot untangle two paths that trade places
    partway through the sample; this move can. Returns the number accepted.
    """
    L, T = state.L, state.T
    if L < 2 or T < 2:
        return 0
    days = np.arange(2, T + 1, dtype=np.int64)
    pl = rng.integers(L, size=days.size)
    pm = (pl + rng.integers(1, L, size=days.size)) % L
    u = rng.random(days.size)
    c0 = hyper.U * stationary_factor(hyper.rho, faults)
    return int(K.tail_swaps(days, pl, pm, u, state.z, state.obs_day, state.counts, state.sums, state.sizes,
                            sigma2, hyper.mu, hyper.rho, hyper.U, c0))


def resample_atoms(state: ClusterState, sigma2, hyper: Hyperparams, rng, faults=NO_FAULTS) -> np.ndarray:
    """FFBS draw of every live cluster path; returns a view of shape (L, T+1)."""
    L = state.L
    if L:
        c0 = hyper.U * stationary_factor(hyper.rho, faults)
        normals = rng.standard_normal((L, state.T + 1))
        K.resample_paths(L, state.counts, state.sums, sigma2, hyper.mu, hyper.rho, hyper.U, c0, normals,
                         faults.gain_sign_flip, state.paths)
    return state.paths[:L]


def _innovation_stats(atoms, mu):
    x = np.asarray(atoms, dtype=float) - mu
    prev, cur = x[:, :-1], x[:, 1:]
    return float(np.sum(prev * prev)), float(np.sum(prev * cur)), float(np.sum(cur * cur)), float(np.sum(x[:, 0] ** 2))


def mu_conditional(atoms, hyper: Hyperparams, priors: Priors, faults=NO_FAULTS):
    """Normal full conditional of mu as ``(mean, var)``."""
    atoms = np.asarray(atoms, dtype=float)
    rho, U = hyper.rho, hyper.U
    if priors.mu_var == 0:
        return priors.mu_mean, 0.0
    prec = 1.0 / priors.mu_var
    info = priors.mu_mean / priors.mu_var
    if atoms.size:
        L, T = atoms.shape[0], atoms.shape[1] - 1
        g = stationary_factor(rho, faults)
        prec += L * T * (1 - rho) ** 2 / U + L / (U * g)
        info += (1 - rho) / U * float(np.sum(atoms[:, 1:] - rho * atoms[:, :-1])) + float(np.sum(atoms[:, 0])) / (U * g)
    return info / prec, 1.0 / prec


def update_mu(atoms, hyper, priors, rng, faults=NO_FAULTS) -> float:
    mean, var = mu_conditional(atoms, hyper, priors, faults)
    return float(mean + np.sqrt(var) * rng.standard_normal())


def U_conditional(atoms, hyper: Hyperparams, priors: Priors, faults=NO_FAULTS):
    """Inverse-gamma full conditional of U as ``(shape, rate)``."""
    atoms = np.asarray(atoms, dtype=float)
    shape = priors.a_U / 2
    rate = priors.b_U / 2
    if atoms.size:
        L, T = atoms.shape[0], atoms.shape[1] - 1
        sxx, sxy, syy, s00 = _innovation_stats(atoms, hyper.mu)
        rho = hyper.rho
        innov = syy - 2 * rho * sxy + rho * rho * sxx
        shape += (L * T + L) / 2
        rate += (innov + s00 / stationary_factor(rho, faults)) / 2
    return shape, rate


def update_U(atoms, hyper, priors, rng, faults=NO_FAULTS) -> float:
    shape, rate = U_conditional(atoms, hyper, priors, faults)
    return float(rate / rng.gamma(shape))


def rho_log_conditional(atoms, hyper: Hyperparams, priors: Priors, faults=NO_FAULTS):
    """Unnormalised log full conditional of rho on ``priors.rho_grid``."""
    grid = priors.rho_grid
    logp = -0.5 * grid**2
    atoms = np.asarray(atoms, dtype=float)
    if atoms.size:
        L = atoms.shape[0]
        sxx, sxy, syy, s00 = _innovation_stats(atoms, hyper.mu)
        U = hyper.U
        g = stationary_factor(grid, faults)
        logp = logp - (syy - 2 * grid * sxy + grid**2 * sxx) / (2 * U) - 0.5 * L * np.log(g) - s00 / (2 * U * g)
    return logp


def rho_conditional(atoms, hyper, priors, faults=NO_FAULTS):
    logp = rho_log_conditional(atoms, hyper, priors, faults)
    if not np.any(np.isfinite(logp)):
        raise SamplerError("rho grid conditional underflowed")
    w = np.exp(logp - np.max(logp))
    return w / w.sum()


def update_rho(atoms, hyper, priors, rng, faults=NO_FAULTS) -> float:
    grid = priors.rho_grid
    if grid.size == 1:
        return float(grid[0])
    p = rho_conditional(atoms, hyper, priors, faults)
    return float(grid[rng.choice(grid.size, p=p)])


def alpha_mixture(L, n, eta, priors: Priors):
    """Gamma mixture for alpha given the auxiliary ``eta``.

    Returns ``(weights, shapes, rate)`` of the two components.
    """
    a, b = priors.a_alpha, priors.b_alpha
    rate = b - np.log(eta)
    odds = (a + L - 1) / (n * rate)
    w = odds / (1 + odds)
    return np.array([w, 1 - w]), np.array([a + L, a + L - 1]), float(rate)


def update_alpha(alpha, L, n, priors: Priors, rng) -> float:
    """Two-step auxiliary-variable draw of the DP mass.

    Leaves ``p(alpha | L, n) ~ prior(alpha) alpha^L Gamma(alpha)/Gamma(alpha+n)``
    invariant.
    """
    if priors.alpha_fixed is not None:
        return priors.alpha_fixed
    if L == 0 or n == 0:
        return float(rng.gamma(priors.a_alpha) / priors.b_alpha)
    eta = rng.beta(alpha + 1.0, n)
    w, shapes, rate = alpha_mixture(L, n, eta, priors)
    shape = shapes[0] if rng.random() < w[0] else shapes[1]
    return float(max(rng.gamma(shape) / rate, 1e-300))


@dataclass
class PosteriorDraw:
    iteration: int
    mu: float
    rho: float
    U: float
    delta: float
    alpha: float
    sigma2: np.ndarray
    sizes: np.ndarray
    atoms: np.ndarray | None = None

    @property
    def L(self):
        return int(len(self.sizes))

    @property
    def n(self):
        return int(np.sum(self.sizes))

    def to_json(self) -> str:
        rec = {
            "iteration": self.iteration,
            "mu": self.mu,
            "rho": self.rho,
            "U": self.U,
            "delta": self.delta,
            "alpha": self.alpha,
            "L": self.L,
            "sigma2": [float(v) for v in self.sigma2],
            "cluster_sizes": [int(v) for v in self.sizes],
        }
        if self.atoms is not None:
            rec["atoms"] = [[float(v) for v in row] for row in self.atoms]
        return json.dumps(rec)

    @classmethod
    def from_json(cls, line: str) -> "PosteriorDraw":
        rec = json.loads(line)
        atoms = rec.get("atoms")
        return cls(
            iteration=int(rec["iteration"]),
            mu=float(rec["mu"]),
            rho=float(rec["rho"]),
            U=float(rec["U"]),
            delta=float(rec["delta"]),
            alpha=float(rec["alpha"]),
            sigma2=np.asarray(rec["sigma2"], dtype=float),
            sizes=np.asarray(rec["cluster_sizes"], dtype=np.int64),
            atoms=None if atoms is None else np.asarray(atoms, dtype=float).reshape(len(rec["cluster_sizes"]), -1),
        )


class DDPSampler:
    """One Markov chain. ``iterate`` performs a full Gibbs scan."""

    def __init__(self, panel: TradePanel, priors: Priors | None = None, rng=None, faults=NO_FAULTS,
                 assignment="collapsed", hyper: Hyperparams | None = None, tail_swaps=True):
        self.priors = priors or Priors()
        self.rng = rng if rng is not None else np.random.default_rng()
        self.faults = faults
        if assignment not in ("collapsed", "conditional"):
            raise ValueError("assignment must be 'collapsed' or 'conditional'")
        self.assignment = assignment
        self.tail_swaps = tail_swaps
        self.T = panel.T
        self.day_counts = np.concatenate([[0], panel.counts]).astype(np.int64)
        obs_day, obs_y = panel.flatten()
        self.state = ClusterState(obs_day, obs_y, self.T)
        self.hyper = hyper or Hyperparams.initial(self.priors)
        self.sigma2 = np.full(self.T + 1, self.priors.S0)
        self.state.paths[: self.state.L] = self.hyper.mu
        self.iteration = 0

    @property
    def atoms(self):
        return self.state.paths[: self.state.L]

    def residual_sumsq(self):
        st = self.state
        if st.n == 0:
            return np.zeros(self.T + 1)
        e = st.obs_y - st.paths[st.z, st.obs_day]
        return np.bincount(st.obs_day, weights=e * e, minlength=self.T + 1)

    def iterate(self):
        rng, h, pr, fl = self.rng, self.hyper, self.priors, self.faults
        if self.assignment == "collapsed":
            sweep(self.state, self.sigma2, h, rng, fl)
        else:
            sweep_conditional(self.state, self.sigma2, h, rng)
        if self.tail_swaps:
            tail_swap_moves(self.state, self.sigma2, h, rng, fl)
        atoms = resample_atoms(self.state, self.sigma2, h, rng, fl)
        h.delta, self.sigma2, _ = sample_delta(self.day_counts, self.residual_sumsq(), pr.delta_grid, rng,
                                                pr.s0, pr.S0, fl.printed_sv_scale)
        h.mu = update_mu(atoms, h, pr, rng, fl)
        h.U = update_U(atoms, h, pr, rng, fl)
        h.rho = update_rho(atoms, h, pr, rng, fl)
        h.alpha = update_alpha(h.alpha, self.state.L, self.state.n, pr, rng)
        self.iteration += 1

    def snapshot(self, store_atoms=True) -> PosteriorDraw:
        h = self.hyper
        return PosteriorDraw(
            iteration=self.iteration,
            mu=h.mu,
            rho=h.rho,
            U=h.U,
            delta=h.delta,
            alpha=h.alpha,
            sigma2=self.sigma2.copy(),
            sizes=self.state.cluster_sizes(),
            atoms=self.atoms.copy() if store_atoms else None,
        )


def mcmc_iteration(sampler: DDPSampler) -> DDPSampler:
    sampler.iterate()
    return sampler


@dataclass(frozen=True)
class ChainConfig:
    burn_in: int = 5000
    kept: int = 20000
    thin: int = 1
    store_atoms: bool = True

    def __post_init__(self):
        if self.burn_in < 0 or self.kept <= 0 or self.thin < 1:
            raise ValueError("need burn_in >= 0, kept > 0, thin >= 1")


def run_chain(panel: TradePanel, config: ChainConfig = ChainConfig(), seed=None, priors: Priors | None = None,
              faults=NO_FAULTS, assignment="collapsed", tail_swaps=True) -> Iterator[PosteriorDraw]:
    """Yield every ``thin``-th draw after ``burn_in`` iterations."""
    rng = np.random.default_rng(seed)
    sampler = DDPSampler(panel, priors, rng, faults, assignment, tail_swaps=tail_swaps)
    for _ in range(config.burn_in):
        sampler.iterate()
    for j in range(1, config.kept + 1):
        sampler.iterate()
        if j % config.thin == 0:
            yield sampler.snapshot(config.store_atoms)


def write_draws(draws, path) -> int:
    count = 0
    with open(path, "w") as fh:
        for d in draws:
            fh.write(d.to_json())
            fh.write("\n")
            count += 1
    return count


def read_draws(path) -> list:
    with open(path) as fh:
        return [PosteriorDraw.from_json(line) for line in fh if line.strip()]
