"""Dynamic linear models of small state dimension.

States ``theta_0 .. theta_T`` evolve as ``theta_t = G_t theta_{t-1} + w_t``
with ``w_t ~ N(0, W_t)`` and ``theta_0 ~ N(m0, C0)``. At each time ``t >= 1``
a block of ``k_t >= 0`` observations ``y_t = F_t theta_t + v_t`` is seen, with
``v_t ~ N(0, sigma2_t I)``. Blocks are updated jointly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

JITTER = 1e-10


class DlmError(ValueError):
    pass


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _per_time(x, T, p, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = np.broadcast_to(x, (T + 1, p, p))
    if x.shape != (T + 1, p, p):
        raise DlmError(f"{name} must be ({p},{p}) or ({T + 1},{p},{p}), got {x.shape}")
    return np.array(x)


@dataclass(frozen=True)
class DlmSpec:
    """Structural quadruple of a DLM over times ``0..T``.

    ``G`` and ``W`` may be a single ``p x p`` matrix or one per time; the
    entry at index 0 is never used.
    """

    G: np.ndarray
    W: np.ndarray
    m0: np.ndarray
    C0: np.ndarray
    T: int

    def __post_init__(self):
        m0 = np.atleast_1d(np.asarray(self.m0, dtype=float))
        p = m0.shape[0]
        C0 = np.atleast_2d(np.asarray(self.C0, dtype=float))
        if C0.shape != (p, p):
            raise DlmError(f"C0 must be {p}x{p}")
        if not np.allclose(C0, C0.T):
            raise DlmError("C0 must be symmetric")
        try:
            np.linalg.cholesky(C0)
        except np.linalg.LinAlgError:
            raise DlmError("C0 must be positive definite") from None
        G = _per_time(self.G, self.T, p, "G")
        W = _per_time(self.W, self.T, p, "W")
        if not np.allclose(W, np.swapaxes(W, 1, 2)):
            raise DlmError("W must be symmetric")
        if np.min(np.linalg.eigvalsh(_sym(W))) < -1e-12:
            raise DlmError("W must be positive semidefinite")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "C0", C0)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "W", _sym(W))

    @property
    def p(self) -> int:
        return self.m0.shape[0]


@dataclass(frozen=True)
class ObsBlock:
    """Observations at one time: ``y`` of length k, design ``F`` of shape (k, p)."""

    y: np.ndarray
    F: np.ndarray

    @classmethod
    def empty(cls, p):
        return cls(np.zeros(0), np.zeros((0, p)))

    @classmethod
    def scalar(cls, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        return cls(values, np.ones((values.size, 1)))


@dataclass
class FilterState:
    a: np.ndarray  # (T+1, p)
    R: np.ndarray  # (T+1, p, p)
    m: np.ndarray
    C: np.ndarray
    f: list  # per time, None when the block is empty
    Q: list


@dataclass
class SmoothedMoments:
    h: np.ndarray
    H: np.ndarray
    B: np.ndarray  # (T+1, p, p); B[T] is zero


def _check_obs(spec, obs, vol):
    if len(obs) != spec.T + 1:
        raise DlmError(f"need {spec.T + 1} observation blocks (index 0 unused), got {len(obs)}")
    vol = np.asarray(vol, dtype=float)
    if vol.shape != (spec.T + 1,):
        raise DlmError(f"vol must have length {spec.T + 1}")
    for t, blk in enumerate(obs):
        y = np.asarray(blk.y)
        F = np.asarray(blk.F)
        if F.shape != (y.shape[0], spec.p):
            raise DlmError(f"time {t}: F must be ({y.shape[0]}, {spec.p}), got {F.shape}")
        if t == 0 and y.shape[0]:
            raise DlmError("time 0 carries no observations")
        if y.shape[0] and not vol[t] > 0:
            raise DlmError(f"time {t}: observation variance must be positive")
    return vol


def _solve_spd(M, rhs):
    """Solve ``M x = rhs`` for symmetric M, with one jittered retry."""
    try:
        return linalg.cho_solve(linalg.cho_factor(M), rhs)
    except linalg.LinAlgError:
        p = M.shape[0]
        bumped = M + JITTER * np.trace(M) / p * np.eye(p)
        try:
            return linalg.cho_solve(linalg.cho_factor(bumped), rhs)
        except linalg.LinAlgError:
            raise DlmError("matrix is singular even after jitter") from None


def forward_filter(spec: DlmSpec, obs: Sequence[ObsBlock], vol) -> FilterState:
    """Kalman filter with joint block updates and Joseph-form covariances."""
    vol = _check_obs(spec, obs, vol)
    T, p = spec.T, spec.p
    a = np.zeros((T + 1, p))
    R = np.zeros((T + 1, p, p))
    m = np.zeros((T + 1, p))
    C = np.zeros((T + 1, p, p))
    f = [None] * (T + 1)
    Q = [None] * (T + 1)
    a[0], R[0] = spec.m0, spec.C0
    m[0], C[0] = spec.m0, spec.C0
    eye = np.eye(p)
    for t in range(1, T + 1):
        G = spec.G[t]
        a[t] = G @ m[t - 1]
        R[t] = _sym(G @ C[t - 1] @ G.T + spec.W[t])
        blk = obs[t]
        k = len(blk.y)
        if k == 0:
            m[t], C[t] = a[t], R[t]
            continue
        F = np.asarray(blk.F, dtype=float)
        f[t] = F @ a[t]
        Q[t] = _sym(F @ R[t] @ F.T + vol[t] * np.eye(k))
        # A = R F' Q^{-1}
        A = _solve_spd(Q[t], F @ R[t]).T
        e = np.asarray(blk.y, dtype=float) - f[t]
        m[t] = a[t] + A @ e
        J = eye - A @ F
        C[t] = _sym(J @ R[t] @ J.T + vol[t] * (A @ A.T))
    return FilterState(a, R, m, C, f, Q)


def _gains(filt: FilterState, spec: DlmSpec):
    T, p = spec.T, spec.p
    B = np.zeros((T + 1, p, p))
    for t in range(T):
        # B_t = C_t G'_{t+1} R_{t+1}^{-1}
        B[t] = _solve_spd(filt.R[t + 1], spec.G[t + 1] @ filt.C[t]).T
    return B


def _psd_sqrt(S):
    w, V = np.linalg.eigh(_sym(S))
    return V * np.sqrt(np.clip(w, 0.0, None))


def backward_sample(filt: FilterState, spec: DlmSpec, rng: np.random.Generator, size=None):
    """Draw state paths from their joint posterior (FFBS backward pass).

    Returns an array of shape ``(T+1, p)``, or ``(size, T+1, p)``.
    """
    T, p = spec.T, spec.p
    B = _gains(filt, spec)
    shape = (1 if size is None else size, p)
    out = np.zeros((shape[0], T + 1, p))
    z = rng.standard_normal((T + 1,) + shape)
    out[:, T] = filt.m[T] + z[T] @ _psd_sqrt(filt.C[T]).T
    for t in range(T - 1, -1, -1):
        d = filt.m[t] + (out[:, t + 1] - filt.a[t + 1]) @ B[t].T
        D = filt.C[t] - B[t] @ filt.R[t + 1] @ B[t].T
        out[:, t] = d + z[t] @ _psd_sqrt(D).T
    return out[0] if size is None else out


def smoothed_moments(filt: FilterState, spec: DlmSpec) -> SmoothedMoments:
    """Marginal posterior moments of each state given all the data (RTS)."""
    T = spec.T
    B = _gains(filt, spec)
    h = filt.m.copy()
    H = filt.C.copy()
    for t in range(T - 1, -1, -1):
        h[t] = filt.m[t] + B[t] @ (h[t + 1] - filt.a[t + 1])
        H[t] = _sym(filt.C[t] + B[t] @ (H[t + 1] - filt.R[t + 1]) @ B[t].T)
    return SmoothedMoments(h, H, B)


def prior_moments(spec: DlmSpec, t: int):
    """Baseline mean and covariance of ``theta_t`` with no data.

    Evaluated from the explicit product expansion
    ``V = P_t C0 P_t' + sum_{r<t} P_{t,r} W_r P_{t,r}' + W_t`` where ``P``
    are products of evolution matrices.
    """
    if t < 0 or t > spec.T:
        raise DlmError(f"t must lie in 0..{spec.T}")
    p = spec.p

    def prod(lo, hi):
        # G_hi G_{hi-1} ... G_lo
        P = np.eye(p)
        for s in range(lo, hi + 1):
            P = spec.G[s] @ P
        return P

    Pt = prod(1, t)
    mean = Pt @ spec.m0
    cov = Pt @ spec.C0 @ Pt.T
    for r in range(1, t):
        Pr = prod(r + 1, t)
        cov = cov + Pr @ spec.W[r] @ Pr.T
    if t >= 1:
        cov = cov + spec.W[t]
    return mean, _sym(cov)


def ar1_spec(rho: float, U: float, T: int, c0: float | None = None) -> DlmSpec:
    """Centred stationary AR(1): state is ``theta - mu``."""
    if c0 is None:
        c0 = U / (1.0 - rho * rho)
    return DlmSpec(G=np.array([[rho]]), W=np.array([[U]]), m0=np.zeros(1), C0=np.array([[c0]]), T=T)
