"""Discount-factor stochastic volatility for the common kernel variance.

Work is done on precisions ``phi_t = 1 / sigma2_t``. With ``s_t`` the
discounted count and ``S_t`` the running scale,

* ``phi_0 ~ Gamma(s0/2, rate s0 S0 / 2)``
* ``phi_t = gamma_t phi_{t-1} / delta`` with
  ``gamma_t ~ Beta(delta s_{t-1} / 2, (1 - delta) s_{t-1} / 2)``
* ``s_t = delta s_{t-1} + n_t`` and
  ``s_t S_t = delta s_{t-1} S_{t-1} + sum_i e_it^2``.

Under this evolution the forward filter ``phi_t | D_t ~ Gamma(s_t/2,
s_t S_t/2)`` is exact, and the backward step is
``phi_{t-1} = delta phi_t + eta``,
``eta ~ Gamma((1 - delta) s_{t-1} / 2, rate s_{t-1} S_{t-1} / 2)``.
``IG(a, b)`` below always means ``1/X ~ Gamma(shape a, rate b)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

DEFAULT_DELTA_GRID = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)
DEFAULT_S0 = 1.0
DEFAULT_SCALE0 = 10.0


class VolatilityError(ValueError):
    pass


@dataclass
class VolFilter:
    delta: float
    s: np.ndarray  # (T+1,), index 0 holds s0
    S: np.ndarray
    counts: np.ndarray
    loglik: float = 0.0

    @property
    def T(self):
        return self.s.shape[0] - 1


@numba.njit(cache=True)
def _filter_kernel(counts, sumsq, delta, s0, S0, printed_scale):
    T = counts.shape[0] - 1
    s = np.empty(T + 1)
    S = np.empty(T + 1)
    s[0] = s0
    S[0] = S0
    loglik = 0.0
    for t in range(1, T + 1):
        n = counts[t]
        nu = delta * s[t - 1]
        s[t] = nu + n
        if printed_scale:
            S[t] = (delta * S[t - 1] + sumsq[t]) / s[t]
        else:
            S[t] = (nu * S[t - 1] + sumsq[t]) / s[t]
        if n > 0:
            # Gamma(nu/2, nu S/2) mixed over N(0, 1/phi) for n residuals.
            shape = 0.5 * nu
            rate = 0.5 * nu * S[t - 1]
            loglik += (
                -0.5 * n * np.log(2.0 * np.pi)
                + shape * np.log(rate)
                - math.lgamma(shape)
                + math.lgamma(shape + 0.5 * n)
                - (shape + 0.5 * n) * np.log(rate + 0.5 * sumsq[t])
            )
    return s, S, loglik


def _check_delta(delta):
    delta = float(delta)
    if not 0.0 < delta <= 1.0:
        raise VolatilityError(f"discount factor must lie in (0, 1], got {delta}")
    return delta


def residual_stats(residuals: Sequence) -> tuple:
    """Per-time counts and sums of squares; ``residuals[0]`` must be empty."""
    counts = np.array([len(np.atleast_1d(r)) for r in residuals], dtype=np.int64)
    sumsq = np.array([float(np.sum(np.square(r))) for r in residuals])
    if counts[0]:
        raise VolatilityError("time 0 carries no observations")
    return counts, sumsq


def filter_from_stats(counts, sumsq, delta, s0=DEFAULT_S0, S0=DEFAULT_SCALE0, printed_scale=False) -> VolFilter:
    delta = _check_delta(delta)
    if not (s0 > 0 and S0 > 0):
        raise VolatilityError("s0 and S0 must be positive")
    counts = np.asarray(counts, dtype=np.int64)
    s, S, ll = _filter_kernel(counts, np.asarray(sumsq, dtype=float), delta, float(s0), float(S0), printed_scale)
    return VolFilter(delta, s, S, counts, ll)


def sv_forward_filter(residuals, delta, s0=DEFAULT_S0, S0=DEFAULT_SCALE0, printed_scale=False) -> VolFilter:
    """Discount filter over residual blocks indexed ``0..T`` (block 0 empty)."""
    counts, sumsq = residual_stats(residuals)
    return filter_from_stats(counts, sumsq, delta, s0, S0, printed_scale)


def sv_backward_sample(filt: VolFilter, rng: np.random.Generator, scale_convention="standard") -> np.ndarray:
    """Draw ``sigma2_0 .. sigma2_T`` given the filter output.

    ``scale_convention="printed"`` uses rate ``S_{t-1}/2`` for the backward
    gamma shock instead of ``s_{t-1} S_{t-1}/2``; kept only for comparison.
    """
    delta, s, S = filt.delta, filt.s, filt.S
    T = filt.T
    shape = 0.5 * (1.0 - delta) * s[:T]
    if scale_convention == "standard":
        rate = 0.5 * s[:T] * S[:T]
    elif scale_convention == "printed":
        rate = 0.5 * S[:T]
    else:
        raise VolatilityError(f"unknown scale convention {scale_convention!r}")
    phi_T = rng.gamma(0.5 * s[T], 1.0 / (0.5 * s[T] * S[T]))
    eta = rng.gamma(shape, 1.0 / rate) if T else np.zeros(0)
    phi = _backward_recursion(phi_T, eta, delta)
    return 1.0 / phi


@numba.njit(cache=True)
def _backward_recursion(phi_T, eta, delta):
    T = eta.shape[0]
    phi = np.empty(T + 1)
    phi[T] = phi_T
    for t in range(T, 0, -1):
        phi[t - 1] = delta * phi[t] + eta[t - 1]
    return phi


def delta_log_likelihoods(counts, sumsq, grid, s0=DEFAULT_S0, S0=DEFAULT_SCALE0, printed_scale=False):
    """Residual log marginal likelihood for every discount value in ``grid``."""
    return np.array([filter_from_stats(counts, sumsq, d, s0, S0, printed_scale).loglik for d in grid])


def delta_posterior(counts, sumsq, grid, s0=DEFAULT_S0, S0=DEFAULT_SCALE0, printed_scale=False):
    ll = delta_log_likelihoods(counts, sumsq, grid, s0, S0, printed_scale)
    if not np.any(np.isfinite(ll)):
        raise VolatilityError("all discount-grid likelihoods are -inf")
    w = np.exp(ll - np.max(ll))
    return w / w.sum()


def sample_delta(counts, sumsq, grid, rng, s0=DEFAULT_S0, S0=DEFAULT_SCALE0, printed_scale=False):
    """Blocked draw of the discount factor and variance path.

    The discount is drawn from its posterior with the variance path
    integrated out (uniform prior on ``grid``), then the path is drawn
    conditionally. Returns ``(delta, sigma2, filter)``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise VolatilityError("discount grid is empty")
    filters = [filter_from_stats(counts, sumsq, d, s0, S0, printed_scale) for d in grid]
    ll = np.array([f.loglik for f in filters])
    if not np.any(np.isfinite(ll)):
        raise VolatilityError("all discount-grid likelihoods are -inf")
    w = np.exp(ll - np.max(ll))
    j = int(rng.choice(grid.size, p=w / w.sum())) if grid.size > 1 else 0
    filt = filters[j]
    return float(grid[j]), sv_backward_sample(filt, rng), filt


def discounted_counts(counts, delta, s0):
    counts = np.asarray(counts, dtype=float)
    s = np.empty(counts.shape[0])
    s[0] = s0
    for t in range(1, s.shape[0]):
        s[t] = delta * s[t - 1] + counts[t]
    return s


def simulate_variance_path(counts, delta, s0, S0, rng, size=None):
    """Prior draws of ``sigma2_0..T`` from the discount evolution.

    ``counts[t]`` (index 0 ignored) fixes the discounted degrees of freedom
    that parameterise each beta shock. Returns shape ``(T+1,)`` or
    ``(size, T+1)``.
    """
    delta = _check_delta(delta)
    s = discounted_counts(counts, delta, s0)
    T = s.shape[0] - 1
    m = 1 if size is None else size
    phi = np.empty((m, T + 1))
    phi[:, 0] = rng.gamma(0.5 * s0, 1.0 / (0.5 * s0 * S0), size=m)
    for t in range(1, T + 1):
        if delta == 1.0:
            g = np.ones(m)
        else:
            g = rng.beta(0.5 * delta * s[t - 1], 0.5 * (1.0 - delta) * s[t - 1], size=m)
        phi[:, t] = g * phi[:, t - 1] / delta
    out = 1.0 / phi
    return out[0] if size is None else out


def expected_variance(counts, delta, s0, S0):
    """Prior mean of ``sigma2_t`` for every t (``inf`` where it diverges).

    ``E sigma2_t = prod_r (delta nu_r - delta)/(delta nu_r - 1) * nu_0/(nu_0 - 1) * S0``
    with ``nu_0 = s0/2`` and ``nu_r = s_{r-1}/2`` the total beta parameter of
    the r-th shock; each factor needs ``delta nu_r > 1``.
    """
    s = discounted_counts(counts, delta, s0)
    T = s.shape[0] - 1
    out = np.empty(T + 1)
    nu0 = 0.5 * s0
    out[0] = nu0 / (nu0 - 1.0) * S0 if nu0 > 1 else np.inf
    for t in range(1, T + 1):
        nu = 0.5 * s[t - 1]
        if delta * nu > 1.0:
            out[t] = out[t - 1] * (delta * nu - delta) / (delta * nu - 1.0)
        else:
            out[t] = np.inf
    return out


def conjugate_posterior(residuals, s0, S0):
    """Constant-variance inverse-gamma posterior ``(shape, rate)``."""
    flat = np.concatenate([np.atleast_1d(np.asarray(r, float)) for r in residuals]) if len(residuals) else np.zeros(0)
    return 0.5 * (s0 + flat.size), 0.5 * (s0 * S0 + float(np.sum(flat**2)))
