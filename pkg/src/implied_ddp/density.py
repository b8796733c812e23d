"""Posterior density estimates and their summaries.

For draw ``r`` the day-``t`` density is the Polya-urn predictive: each
occupied cluster contributes ``n_l/(alpha+n) N(y | theta_lt, sigma2_t)`` and a
fresh cluster contributes ``alpha/(alpha+n) N(y | mu, sigma2_t + U/(1-rho^2))``.
Estimates average this over draws.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

DEFAULT_GRID_SIZE = 512
DEFAULT_THRESHOLDS = (-15.0,)
MAX_GRID_SIZE = 200_000
_CHUNK = 1 << 22


class DensityError(ValueError):
    pass


@dataclass
class DensityEstimate:
    t: int
    grid: np.ndarray
    values: np.ndarray
    draws_used: int

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.grid))

    def grid_mean(self) -> float:
        return float(np.trapezoid(self.grid * self.values, self.grid))


@dataclass
class SummaryRow:
    t: int
    mean: float
    median: float
    q25: float
    q75: float
    tails: dict = field(default_factory=dict)

    @property
    def iqr(self) -> float:
        return self.q75 - self.q25


@dataclass
class Mixture:
    """Flattened Gaussian mixture with weights summing to one."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    draws_used: int

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    @property
    def variance(self) -> float:
        m = self.mean
        return float(np.dot(self.weights, self.variances + (self.means - m) ** 2))

    def _reduce(self, y, fn):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.zeros(y.shape[0])
        sd = np.sqrt(self.variances)
        step = max(1, _CHUNK // max(1, self.means.shape[0]))
        for lo in range(0, y.shape[0], step):
            z = (y[lo: lo + step, None] - self.means[None, :]) / sd[None, :]
            out[lo: lo + step] = fn(z, sd) @ self.weights
        return out

    def pdf(self, y):
        return self._reduce(y, lambda z, sd: np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * sd))

    def cdf(self, y):
        return self._reduce(y, lambda z, sd: special.ndtr(z))


def _require(draws):
    draws = list(draws)
    if not draws:
        raise DensityError("no posterior draws supplied")
    for d in draws:
        if d.atoms is None:
            raise DensityError("draws carry no atom paths; re-fit with atom storage enabled")
    return draws


def mixture_for_day(draws, t: int, k: int = 0) -> Mixture:
    """Mixture of all draws for day ``t`` propagated ``k`` AR(1) steps ahead.

    ``t`` indexes the state (0..T). For ``k > 0`` kernel means shrink to
    ``mu + rho^k (theta_lt - mu)`` and kernel variances gain
    ``U (1 - rho^{2k}) / (1 - rho^2)``; sigma2 stays at its day-``t`` value.
    """
    draws = _require(draws)
    if k < 0:
        raise DensityError("prediction horizon must be >= 0")
    R = len(draws)
    w, m, v = [], [], []
    for d in draws:
        T = d.sigma2.shape[0] - 1
        if not 0 <= t <= T:
            raise DensityError(f"day {t} outside 0..{T}")
        sizes = np.asarray(d.sizes, dtype=float)
        n = sizes.sum()
        s2 = d.sigma2[t]
        stat = d.U / (1.0 - d.rho * d.rho)
        theta = d.atoms[:, t]
        if k:
            rk = d.rho**k
            theta = d.mu + rk * (theta - d.mu)
            extra = d.U * (1.0 - rk * rk) / (1.0 - d.rho * d.rho)
        else:
            extra = 0.0
        denom = (d.alpha + n) * R
        w.append(sizes / denom)
        m.append(theta)
        v.append(np.full(sizes.shape[0], s2 + extra))
        w.append([d.alpha / denom])
        m.append([d.mu])
        v.append([s2 + stat])
    return Mixture(np.concatenate(w), np.concatenate(m).astype(float), np.concatenate(v), R)


def default_grid(mix: Mixture, data_range=None, size=DEFAULT_GRID_SIZE, drop_mass=1e-7) -> np.ndarray:
    """Grid covering +/- 8 sd of every kernel and, if given, ``data_range``.

    The lightest kernels, up to ``drop_mass`` of total weight, are left out
    of the range, so one stray wide kernel cannot stretch the grid. The
    point count grows beyond ``size`` when needed to keep the spacing at or
    below half the narrowest kernel sd.
    """
    order = np.argsort(mix.weights)
    keep = order[np.cumsum(mix.weights[order]) > drop_mass]
    sd = np.sqrt(mix.variances[keep])
    lo = float(np.min(mix.means[keep] - 8 * sd))
    hi = float(np.max(mix.means[keep] + 8 * sd))
    if data_range is not None:
        lo, hi = min(lo, data_range[0]), max(hi, data_range[1])
    narrow = 0.5 * math.sqrt(float(np.min(mix.variances)))
    count = max(int(size), int(math.ceil((hi - lo) / narrow)) + 1)
    if count > MAX_GRID_SIZE:
        raise DensityError("kernel widths too small for a dense grid; pass an explicit grid")
    return np.linspace(lo, hi, count)


def density_from_mixture(mix: Mixture, t, grid=None, data_range=None, size=DEFAULT_GRID_SIZE) -> DensityEstimate:
    if grid is None:
        grid = default_grid(mix, data_range, size)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise DensityError("grid must be strictly increasing")
    return DensityEstimate(int(t), grid, mix.pdf(grid), mix.draws_used)


def density_at(draws, t: int, grid=None, data_range=None, size=DEFAULT_GRID_SIZE) -> DensityEstimate:
    """Filtered density for day ``t`` (states indexed 1..T)."""
    return density_from_mixture(mixture_for_day(draws, t), t, grid, data_range, size)


def predict_ahead(draws, t: int, k: int, grid=None, data_range=None, size=DEFAULT_GRID_SIZE) -> DensityEstimate:
    """Density for day ``t + k`` from the day-``t`` posterior."""
    if k == 0:
        return density_at(draws, t, grid, data_range, size)
    mix = mixture_for_day(draws, t, k)
    return density_from_mixture(mix, t + k, grid, data_range, size)


def mixture_quantiles(mix: Mixture, probs, tol=1e-9, max_iter=200) -> np.ndarray:
    """Invert the mixture CDF by bisection, all probabilities at once."""
    probs = np.asarray(probs, dtype=float)
    if np.any((probs <= 0) | (probs >= 1)):
        raise DensityError("quantile levels must lie in (0, 1)")
    sd = math.sqrt(mix.variance)
    span = 10 * sd
    for attempt in range(2):
        lo = np.full(probs.shape, float(np.min(mix.means)) - span)
        hi = np.full(probs.shape, float(np.max(mix.means)) + span)
        if np.all(mix.cdf(lo) < probs) and np.all(mix.cdf(hi) > probs):
            break
        span *= 10
    else:
        raise DensityError("could not bracket mixture quantiles")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = mix.cdf(mid) < probs
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < tol * (1 + sd):
            break
    return 0.5 * (lo + hi)


def summarize_mixture(mix: Mixture, t, thresholds=DEFAULT_THRESHOLDS) -> SummaryRow:
    q25, med, q75 = mixture_quantiles(mix, [0.25, 0.5, 0.75])
    tails = {}
    if thresholds:
        probs = mix.cdf(np.asarray(thresholds, dtype=float))
        tails = {float(c): float(p) for c, p in zip(thresholds, probs)}
    return SummaryRow(int(t), mix.mean, float(med), float(q25), float(q75), tails)


def summaries(draws, t: int, thresholds=DEFAULT_THRESHOLDS) -> SummaryRow:
    return summarize_mixture(mixture_for_day(draws, t), t, thresholds)


def summary_series(draws, thresholds=DEFAULT_THRESHOLDS) -> list:
    draws = _require(draws)
    T = draws[0].sigma2.shape[0] - 1
    return [summaries(draws, t, thresholds) for t in range(1, T + 1)]


def threshold_label(c) -> str:
    return f"p_below_{float(c):g}"


def write_densities(estimates, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day_index", "y", "density"])
        for est in estimates:
            for y, v in zip(est.grid, est.values):
                w.writerow([est.t, repr(float(y)), repr(float(v))])


def write_summaries(rows, path, thresholds=DEFAULT_THRESHOLDS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day_index", "mean", "median", "q25", "q75", "iqr"] + [threshold_label(c) for c in thresholds])
        for r in rows:
            w.writerow([r.t] + [repr(float(x)) for x in (r.mean, r.median, r.q25, r.q75, r.iqr)]
                       + [repr(r.tails[float(c)]) for c in thresholds])


def read_densities(path) -> list:
    by_day = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["day_index", "y", "density"]:
            raise DensityError(f"{path}: unexpected header {header}")
        for row in reader:
            by_day.setdefault(int(row[0]), []).append((float(row[1]), float(row[2])))
    out = []
    for t, pairs in by_day.items():
        arr = np.array(pairs)
        out.append(DensityEstimate(t, arr[:, 0], arr[:, 1], 0))
    return out
