"""Validation suite run by ``implied-ddp validate``."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import dlm
from ..ddp_sampler import NO_FAULTS
from ..market_data import implied_price
from ..volatility import conjugate_posterior, sv_backward_sample, sv_forward_filter
from .crp import crp_check
from .diagnostics import gelman_rubin
from .gaussian_oracle import gaussian_oracle
from .geweke import GewekeConfig, geweke_test


@dataclass
class CheckResult:
    name: str
    statistic: float
    threshold: float
    passed: bool
    detail: str = ""

    def __post_init__(self):
        self.statistic = float(self.statistic)
        self.threshold = float(self.threshold)
        self.passed = bool(self.passed)


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_json(self):
        return json.dumps({"passed": self.passed, "checks": [asdict(c) for c in self.checks]}, indent=2)


def random_dlm_instance(rng, p=None, T=None, empty_prob=0.25):
    """Random SPD model and observation blocks (time 0 empty)."""
    p = p or int(rng.integers(1, 3))
    T = T if T is not None else int(rng.integers(1, 7))
    G = rng.normal(0, 0.7, size=(T + 1, p, p))
    A = rng.normal(size=(T + 1, p, p))
    W = A @ np.swapaxes(A, 1, 2) / p + 0.1 * np.eye(p)
    B = rng.normal(size=(p, p))
    spec = dlm.DlmSpec(G=G, W=W, m0=rng.normal(size=p), C0=B @ B.T + 0.5 * np.eye(p), T=T)
    obs = [dlm.ObsBlock.empty(p)]
    for _ in range(T):
        k = 0 if rng.random() < empty_prob else int(rng.integers(1, 4))
        obs.append(dlm.ObsBlock(rng.normal(size=k) * 2, rng.normal(size=(k, p))))
    vol = rng.uniform(0.3, 2.0, size=T + 1)
    return spec, obs, vol


def dlm_max_error(spec, obs, vol):
    filt = dlm.forward_filter(spec, obs, vol)
    sm = dlm.smoothed_moments(filt, spec)
    ref = gaussian_oracle(spec, obs, vol)
    return max(
        np.max(np.abs(filt.m - ref.filt_mean)), np.max(np.abs(filt.C - ref.filt_cov)),
        np.max(np.abs(sm.h - ref.smooth_mean)), np.max(np.abs(sm.H - ref.smooth_cov)),
    )


def check_parity(rng, size=10_000):
    c, p = rng.uniform(0, 100, size), rng.uniform(0, 100, size)
    x, r, tau = rng.uniform(1, 3000, size), rng.uniform(-0.02, 0.1, size), rng.uniform(0.01, 3, size)
    got = np.array([implied_price(*a) for a in zip(c, p, x, r, tau)])
    ref = x * np.exp(-r * tau) + c - p
    err = float(np.max(np.abs(got - ref) / np.abs(ref)))
    return CheckResult("parity relative error", err, 1e-12, err <= 1e-12)


def check_dlm(rng, instances=50):
    err = max(dlm_max_error(*random_dlm_instance(rng)) for _ in range(instances))
    return CheckResult("DLM vs dense Gaussian oracle", float(err), 1e-8, err <= 1e-8)


def check_sv_conjugacy(rng):
    res = [np.zeros(0)] + [rng.normal(0, 2, size=int(rng.integers(0, 5))) for _ in range(20)]
    f = sv_forward_filter(res, 1.0, 1.0, 10.0)
    shape, rate = conjugate_posterior(res[1:], 1.0, 10.0)
    err = max(abs(f.s[-1] / 2 - shape) / shape, abs(f.s[-1] * f.S[-1] / 2 - rate) / rate)
    path = sv_backward_sample(f, rng)
    ok = err <= 1e-10 and np.all(path == path[-1])
    return CheckResult("SV conjugacy at delta=1", float(err), 1e-10, bool(ok))


def check_crp(rng, faults, sweeps):
    r = crp_check(1.0, 4, sweeps, rng, faults)
    return CheckResult("urn partition TV (n=4, alpha=1)", r.tv, 0.02, r.tv < 0.02)


def check_geweke(rng, faults, iterations):
    res = geweke_test(GewekeConfig(iterations=iterations), rng, faults)
    z = res.max_abs_z
    detail = json.dumps({k: (v if math.isfinite(v) else str(v)) for k, v in res.as_dict().items()})
    return CheckResult("Geweke max |z|", z, 4.0, bool(z < 4.0), detail + (" " + res.note if res.note else ""))


def check_gelman_rubin():
    r = gelman_rubin([[1, 2, 3, 4], [2, 3, 4, 5]])
    err = abs(r - math.sqrt(1.2))
    return CheckResult("Gelman-Rubin hand example", err, 1e-12, err <= 1e-12)


def run_suite(seed=0, faults=NO_FAULTS, geweke_iterations=50_000, crp_sweeps=50_000) -> ValidationReport:
    ss = np.random.SeedSequence(seed).spawn(6)
    rngs = [np.random.default_rng(s) for s in ss]
    checks = [
        check_parity(rngs[0]),
        check_dlm(rngs[1]),
        check_sv_conjugacy(rngs[2]),
        check_crp(rngs[3], faults, crp_sweeps),
        check_geweke(rngs[4], faults, geweke_iterations),
        check_gelman_rubin(),
    ]
    return ValidationReport(checks)
