"""Monte Carlo checks of the prior moments of observations and variances."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..volatility import expected_variance, simulate_variance_path


@dataclass(frozen=True)
class MomentSetup:
    mu: float = -3.0
    rho: float = 0.8
    U: float = 1.0
    alpha: float = 1.0
    delta: float = 0.9
    s0: float = 10.0
    S0: float = 2.0
    per_day: int = 6
    T: int = 4
    t: int = 2
    k: int = 2
    sticks: int = 80

    @property
    def counts(self):
        return np.concatenate([[0], np.full(self.T, self.per_day)])

    @property
    def stationary(self):
        return self.U / (1 - self.rho**2)


@dataclass
class MomentCheck:
    name: str
    estimate: float
    se: float
    target: float

    @property
    def z(self) -> float:
        return (self.estimate - self.target) / self.se

    @property
    def passed(self) -> bool:
        return abs(self.z) <= 3.0


def _mean_check(name, x, target):
    return MomentCheck(name, float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size)), float(target))


def _var_check(name, x, target):
    c = x - x.mean()
    v = float(np.mean(c * c))
    se = math.sqrt(max(float(np.mean(c**4)) - v * v, 0.0) / x.size)
    return MomentCheck(name, v * x.size / (x.size - 1), se, float(target))


def _cov_check(name, x, y, target):
    prod = (x - x.mean()) * (y - y.mean())
    return MomentCheck(name, float(np.mean(prod)), float(np.std(prod, ddof=1) / math.sqrt(x.size)), float(target))


def simulate_pairs(cfg: MomentSetup, size, rng, chunk=20_000):
    """Replicates of two observations, at days ``t`` and ``t+k``, from a fresh DP each.

    Returns ``(y1, y2, cond_mean, sigma2)`` with ``cond_mean = E(y1 | K_t)``
    and ``sigma2`` the full variance paths.
    """
    y1 = np.empty(size)
    y2 = np.empty(size)
    cm = np.empty(size)
    s2 = np.empty((size, cfg.T + 1))
    sd = math.sqrt(cfg.stationary)
    rk = cfg.rho**cfg.k
    inno = math.sqrt(cfg.stationary * (1 - rk * rk))
    for lo in range(0, size, chunk):
        m = min(chunk, size - lo)
        v = rng.beta(1.0, cfg.alpha, size=(m, cfg.sticks))
        left = np.cumprod(1 - v, axis=1)
        w = v * np.concatenate([np.ones((m, 1)), left[:, :-1]], axis=1)
        if np.max(left[:, -1]) >= 1e-10:
            raise RuntimeError("stick truncation too short for this alpha")
        w /= w.sum(axis=1, keepdims=True)
        cum = np.cumsum(w, axis=1)
        th_t = cfg.mu + sd * rng.standard_normal((m, cfg.sticks))
        th_tk = cfg.mu + rk * (th_t - cfg.mu) + inno * rng.standard_normal((m, cfg.sticks))
        rows = np.arange(m)
        z1 = np.minimum((cum < rng.random(m)[:, None]).sum(axis=1), cfg.sticks - 1)
        z2 = np.minimum((cum < rng.random(m)[:, None]).sum(axis=1), cfg.sticks - 1)
        sig = simulate_variance_path(cfg.counts, cfg.delta, cfg.s0, cfg.S0, rng, size=m)
        y1[lo:lo + m] = th_t[rows, z1] + np.sqrt(sig[:, cfg.t]) * rng.standard_normal(m)
        y2[lo:lo + m] = th_tk[rows, z2] + np.sqrt(sig[:, cfg.t + cfg.k]) * rng.standard_normal(m)
        cm[lo:lo + m] = np.sum(w * th_t, axis=1)
        s2[lo:lo + m] = sig
    return y1, y2, cm, s2


def simulate_precision_beta_path(counts, delta, s0, S0, rng, size):
    """Variance paths under ``1/sigma2_t = zeta_t / (delta sigma2_{t-1})``,
    ``zeta_t ~ Beta(delta n_t, (1-delta) n_t)``, ``sigma2_0 ~ IG(s0, s0 S0)``."""
    counts = np.asarray(counts, dtype=float)
    phi = np.empty((size, counts.size))
    phi[:, 0] = rng.gamma(s0, 1.0 / (s0 * S0), size=size)
    for t in range(1, counts.size):
        phi[:, t] = rng.beta(delta * counts[t], (1 - delta) * counts[t], size=size) * phi[:, t - 1] / delta
    return 1.0 / phi


def product_formula(counts, delta, s0, S0):
    """``prod_r (delta n_r - delta)/(delta n_r - 1) * s0/(s0-1) * S0`` for t = 0..T."""
    counts = np.asarray(counts, dtype=float)
    out = np.empty(counts.size)
    out[0] = s0 / (s0 - 1) * S0
    for t in range(1, counts.size):
        n = counts[t]
        out[t] = out[t - 1] * (delta * n - delta) / (delta * n - 1)
    return out


def prior_moment_checks(cfg: MomentSetup, size, rng):
    """Checks keyed by name; compare each Monte Carlo estimate with its closed form."""
    y1, y2, cm, s2 = simulate_pairs(cfg, size, rng)
    Es2 = expected_variance(cfg.counts, cfg.delta, cfg.s0, cfg.S0)
    V = cfg.stationary
    a = cfg.alpha
    checks = [
        _mean_check("E(y)", y1, cfg.mu),
        _var_check("V(y) = V(theta) + E(sigma2)", y1, V + Es2[cfg.t]),
        _var_check("V(E(y|K)) = V(theta)/(1+alpha)", cm, V / (1 + a)),
        _cov_check("Cov(y_t, y_t+k) = rho^k V(theta)/(1+alpha)", y1, y2, cfg.rho**cfg.k * V / (1 + a)),
    ]
    for t in range(cfg.T + 1):
        checks.append(_mean_check(f"E(sigma2_{t}) discount model", s2[:, t], Es2[t]))
    pb = simulate_precision_beta_path(cfg.counts, cfg.delta, cfg.s0, cfg.S0, rng, size)
    pf = product_formula(cfg.counts, cfg.delta, cfg.s0, cfg.S0)
    for t in range(cfg.T + 1):
        checks.append(_mean_check(f"E(sigma2_{t}) product formula", pb[:, t], pf[t]))
    printed = _var_check("V(y) = V(theta)/(1+alpha) + E(sigma2)", y1, V / (1 + a) + Es2[cfg.t])
    return {c.name: c for c in checks}, printed
