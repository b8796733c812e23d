"""Partition-level check of the allocation sampler against the Polya urn."""
from __future__ import annotations

from dataclasses import dataclass
from math import lgamma, log, exp

import numpy as np

from ..ddp_sampler import ClusterState, Hyperparams, NO_FAULTS, sweep

MAX_N = 8


def set_partitions(n):
    """Yield every partition of ``range(n)`` as a restricted growth string."""
    if n == 0:
        yield ()
        return
    z = [0] * n

    def rec(i, top):
        if i == n:
            yield tuple(z)
            return
        for k in range(top + 2):
            z[i] = k
            yield from rec(i + 1, max(top, k))

    yield from rec(1, 0)


def canonical(labels) -> tuple:
    seen = {}
    return tuple(seen.setdefault(int(l), len(seen)) for l in labels)


def partition_log_prob(key, alpha) -> float:
    """Exchangeable partition probability ``alpha^K prod (n_k-1)! Gamma(alpha)/Gamma(alpha+n)``."""
    n = len(key)
    sizes = np.bincount(np.asarray(key, dtype=int)) if n else np.zeros(0, int)
    return len(sizes) * log(alpha) + sum(lgamma(s) for s in sizes) + lgamma(alpha) - lgamma(alpha + n)


def exact_partition_probs(n, alpha) -> dict:
    if n > MAX_N:
        raise ValueError(f"enumeration is limited to n <= {MAX_N}")
    return {key: exp(partition_log_prob(key, alpha)) for key in set_partitions(n)}


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


@dataclass
class CrpResult:
    alpha: float
    n: int
    sweeps: int
    tv: float
    empirical: dict
    exact: dict

    def co_cluster(self, i=0, j=1) -> float:
        return sum(p for k, p in self.empirical.items() if k[i] == k[j])


def crp_check(alpha, n, sweeps, rng, faults=NO_FAULTS, burn_in=100) -> CrpResult:
    """Run collapsed sweeps with the likelihood switched off and compare
    partition frequencies with exact enumeration."""
    exact = exact_partition_probs(n, alpha)
    state = ClusterState(np.ones(n, dtype=np.int64), np.zeros(n), 1)
    hyper = Hyperparams(mu=0.0, rho=0.0, U=1.0, delta=1.0, alpha=alpha)
    sigma2 = np.ones(2)
    counts = {}
    for it in range(burn_in + sweeps):
        sweep(state, sigma2, hyper, rng, faults, neutral=True)
        if it >= burn_in:
            key = canonical(state.z)
            counts[key] = counts.get(key, 0) + 1
    emp = {k: c / sweeps for k, c in counts.items()}
    return CrpResult(alpha, n, sweeps, total_variation(emp, exact), emp, exact)
