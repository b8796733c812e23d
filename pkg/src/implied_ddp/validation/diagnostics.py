"""Convergence diagnostics."""
from __future__ import annotations

import math

import numpy as np


def gelman_rubin(chains) -> float:
    """Potential scale reduction for ``m`` chains of equal length ``n``.

    ``sqrt(V/W)`` with ``V = (n-1)/n W + (m+1)/(m n) B``. Returns ``nan``
    when the within-chain variance is zero (the statistic is undefined).
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need at least 2 chains of length >= 2 as an (m, n) array")
    m, n = x.shape
    W = float(np.mean(np.var(x, axis=1, ddof=1)))
    B = n * float(np.var(np.mean(x, axis=1), ddof=1))
    if W == 0.0:
        return math.nan
    V = (n - 1) / n * W + (m + 1) / (m * n) * B
    return math.sqrt(V / W)


def gelman_rubin_report(traces: dict) -> dict:
    """``{name: (m, n) array}`` to ``{name: {"rhat": value, "defined": bool}}``."""
    out = {}
    for name, chains in traces.items():
        r = gelman_rubin(chains)
        out[name] = {"rhat": None if math.isnan(r) else r, "defined": not math.isnan(r)}
    return out


def batch_means_se(x, batches=50) -> float:
    """Standard error of the mean of an autocorrelated series."""
    x = np.asarray(x, dtype=float)
    b = x.shape[0] // batches
    if b < 2:
        raise ValueError("series too short for the requested number of batches")
    means = x[: b * batches].reshape(batches, b).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(batches))
