"""Forward simulation from the generative model."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from datetime import date, timedelta

import numpy as np

from ..market_data import TradePanel
from ..volatility import simulate_variance_path

MAX_STICKS = 10_000


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    mu: float
    rho: float
    U: float
    delta: float
    alpha: float
    s0: float
    S0: float
    counts: tuple
    tol: float = 1e-10
    start: date = date(2008, 1, 2)

    def __post_init__(self):
        if not (-1 < self.rho < 1 and self.U > 0 and self.alpha > 0 and 0 < self.delta <= 1):
            raise SimulationError("hyperparameters out of range")
        if self.s0 <= 0 or self.S0 <= 0 or not 0 < self.tol < 1:
            raise SimulationError("need s0, S0 > 0 and tol in (0, 1)")
        counts = tuple(int(c) for c in self.counts)
        if not counts or min(counts) < 0:
            raise SimulationError("counts must be a nonempty sequence of nonnegative integers")
        object.__setattr__(self, "counts", counts)

    @property
    def T(self):
        return len(self.counts)

    def days(self):
        return tuple(self.start + timedelta(days=i) for i in range(self.T))


MARKET_MEAN_COUNT = 4385 / 306


def market_shaped_spec(rng: np.random.Generator, T=306, max_count=26, mean_count=MARKET_MEAN_COUNT,
                       **overrides) -> SyntheticSpec:
    """T days with beta-binomial counts on 0..max_count.

    Beta(2p, 2(1-p)) success probabilities with ``p = mean_count/max_count``
    give a nearly flat spread that still includes empty days.
    """
    params = dict(mu=-7.0, rho=0.95, U=0.5, delta=0.95, alpha=1.0, s0=20.0, S0=4.0)
    params.update(overrides)
    p = mean_count / max_count
    if not 0 < p < 1:
        raise SimulationError("mean_count must lie strictly between 0 and max_count")
    counts = tuple(int(c) for c in rng.binomial(max_count, rng.beta(2 * p, 2 * (1 - p), size=T)))
    return SyntheticSpec(counts=counts, **params)


@dataclass
class GroundTruth:
    weights: np.ndarray
    paths: np.ndarray  # (K, T+1)
    sigma2: np.ndarray  # (T+1,)
    allocations: list  # per day, atom index of every observation

    def to_json(self, spec: SyntheticSpec) -> str:
        hyper = {k: v for k, v in asdict(spec).items() if k not in ("counts", "start")}
        return json.dumps({
            "hyperparameters": hyper,
            "counts": list(spec.counts),
            "weights": self.weights.tolist(),
            "paths": self.paths.tolist(),
            "sigma2": self.sigma2.tolist(),
            "allocations": [a.tolist() for a in self.allocations],
        })


def stick_weights(alpha, rng, tol=1e-10, max_sticks=MAX_STICKS) -> np.ndarray:
    """Stick-breaking weights until the leftover mass drops below ``tol``."""
    weights = []
    left = 1.0
    while left >= tol:
        if len(weights) >= max_sticks:
            raise SimulationError(f"stick-breaking needs more than {max_sticks} atoms; alpha is too large")
        v = rng.beta(1.0, alpha)
        weights.append(left * v)
        left *= 1.0 - v
    return np.array(weights)


def stationary_paths(mu, rho, U, T, size, rng) -> np.ndarray:
    x = np.empty((size, T + 1))
    x[:, 0] = rng.normal(0.0, np.sqrt(U / (1 - rho * rho)), size=size)
    for t in range(1, T + 1):
        x[:, t] = rho * x[:, t - 1] + rng.normal(0.0, np.sqrt(U), size=size)
    return x + mu


def simulate_panel(spec: SyntheticSpec, rng: np.random.Generator):
    """Draw a panel and its latent structure. Returns ``(panel, truth)``."""
    w = stick_weights(spec.alpha, rng, spec.tol)
    cum = np.cumsum(w)
    paths = stationary_paths(spec.mu, spec.rho, spec.U, spec.T, w.size, rng)
    counts = np.concatenate([[0], spec.counts])
    sigma2 = simulate_variance_path(counts, spec.delta, spec.s0, spec.S0, rng)
    deltas, alloc = [], []
    for t in range(1, spec.T + 1):
        k = counts[t]
        z = np.minimum(np.searchsorted(cum, rng.random(k) * cum[-1], side="right"), w.size - 1)
        alloc.append(z)
        deltas.append(paths[z, t] + np.sqrt(sigma2[t]) * rng.standard_normal(k))
    panel = TradePanel(spec.days(), tuple(deltas))
    return panel, GroundTruth(w, paths, sigma2, alloc)
