"""Exact state-space moments by dense joint-Gaussian conditioning.

Shares no code with the recursive filter: the joint law of all states and
observations is written down as one big normal vector and conditioned with
ordinary linear algebra.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DIM = 64


class OracleError(ValueError):
    pass


@dataclass
class OracleMoments:
    prior_mean: np.ndarray  # (T+1, p)
    prior_cov: np.ndarray  # (T+1, p, p)
    filt_mean: np.ndarray
    filt_cov: np.ndarray
    smooth_mean: np.ndarray
    smooth_cov: np.ndarray
    joint_mean: np.ndarray  # ((T+1) p,) given all data
    joint_cov: np.ndarray


def _joint_prior(G, W, m0, C0, T):
    p = m0.shape[0]
    N = (T + 1) * p
    # states = mean + M e, e = (theta_0 - m0, w_1, ..., w_T)
    M = np.zeros((N, N))
    mean = np.zeros(N)
    mean[:p] = m0
    M[:p, :p] = np.eye(p)
    for t in range(1, T + 1):
        rows = slice(t * p, (t + 1) * p)
        prev = slice((t - 1) * p, t * p)
        mean[rows] = G[t] @ mean[prev]
        M[rows] = G[t] @ M[prev]
        M[rows, rows] += np.eye(p)
    D = np.zeros((N, N))
    D[:p, :p] = C0
    for t in range(1, T + 1):
        D[t * p:(t + 1) * p, t * p:(t + 1) * p] = W[t]
    return mean, M @ D @ M.T


def _condition(mean, cov, H, y, noise):
    if H.shape[0] == 0:
        return mean.copy(), cov.copy()
    S = H @ cov @ H.T + np.diag(noise)
    K = np.linalg.solve(S, H @ cov).T
    m = mean + K @ (y - H @ mean)
    c = cov - K @ H @ cov
    return m, 0.5 * (c + c.T)


def gaussian_oracle(spec, obs, vol) -> OracleMoments:
    """``spec`` needs ``G, W, m0, C0, T``; ``obs[t]`` has ``y`` and ``F``."""
    G = np.asarray(spec.G, dtype=float)
    W = np.asarray(spec.W, dtype=float)
    m0 = np.atleast_1d(np.asarray(spec.m0, dtype=float))
    C0 = np.atleast_2d(np.asarray(spec.C0, dtype=float))
    T = int(spec.T)
    p = m0.shape[0]
    if (T + 1) * p > MAX_DIM:
        raise OracleError(f"dense oracle limited to (T+1)p <= {MAX_DIM}")
    if G.ndim == 2:
        G = np.broadcast_to(G, (T + 1, p, p))
    if W.ndim == 2:
        W = np.broadcast_to(W, (T + 1, p, p))
    vol = np.asarray(vol, dtype=float)
    mean, cov = _joint_prior(G, W, m0, C0, T)
    N = (T + 1) * p
    rows, ys, noise, times = [], [], [], []
    for t, blk in enumerate(obs):
        F = np.atleast_2d(np.asarray(blk.F, dtype=float))
        y = np.asarray(blk.y, dtype=float).reshape(-1)
        for j in range(y.shape[0]):
            h = np.zeros(N)
            h[t * p:(t + 1) * p] = F[j]
            rows.append(h)
            ys.append(y[j])
            noise.append(vol[t])
            times.append(t)
    H = np.array(rows).reshape(-1, N)
    ys = np.array(ys)
    noise = np.array(noise)
    times = np.array(times, dtype=int)

    def blocks(m, c):
        mm = m.reshape(T + 1, p)
        cc = np.stack([c[t * p:(t + 1) * p, t * p:(t + 1) * p] for t in range(T + 1)])
        return mm, cc

    pm, pc = blocks(mean, cov)
    jm, jc = _condition(mean, cov, H, ys, noise)
    sm, sc = blocks(jm, jc)
    fm = np.zeros((T + 1, p))
    fc = np.zeros((T + 1, p, p))
    for t in range(T + 1):
        keep = times <= t
        m, c = _condition(mean, cov, H[keep], ys[keep], noise[keep])
        bm, bc = blocks(m, c)
        fm[t], fc[t] = bm[t], bc[t]
    return OracleMoments(pm, pc, fm, fc, sm, sc, jm, jc)
