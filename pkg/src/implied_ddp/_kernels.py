"""Compiled inner loops for the scalar AR(1) mixture sampler.

Cluster ``l`` keeps per-day observation counts and sums. Its cache holds
the one-step forward predictive ``N(fa, fR)`` of the centred state at each
day (data strictly before the day) and the backward information
``exp(-bp x^2 / 2 + bq x)`` carried by data strictly after the day. The
posterior of the state at day ``t`` given any subset of that day's
observations is then one precision-weighted combination, which is what the
collapsed reassignment step needs.
"""
import math

import numba
import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@numba.njit(cache=True)
def refresh(l, counts, sums, sigma2, mu, rho, U, c0, fa, fR, bp, bq):
    T = counts.shape[1] - 1
    m = 0.0
    C = c0
    fa[l, 0] = 0.0
    fR[l, 0] = c0
    for t in range(1, T + 1):
        a = rho * m
        R = rho * rho * C + U
        fa[l, t] = a
        fR[l, t] = R
        k = counts[l, t]
        if k > 0:
            v = sigma2[t] / k
            ybar = sums[l, t] / k - mu
            Q = R + v
            m = a + R / Q * (ybar - a)
            C = R * v / Q
        else:
            m = a
            C = R
    bp[l, T] = 0.0
    bq[l, T] = 0.0
    for t in range(T - 1, -1, -1):
        k = counts[l, t + 1]
        s2 = sigma2[t + 1]
        P = bp[l, t + 1] + k / s2
        q = bq[l, t + 1] + (sums[l, t + 1] - k * mu) / s2
        den = 1.0 + U * P
        bp[l, t] = rho * rho * P / den
        bq[l, t] = rho * q / den


@numba.njit(cache=True)
def refresh_all(L, counts, sums, sigma2, mu, rho, U, c0, fa, fR, bp, bq):
    for l in range(L):
        refresh(l, counts, sums, sigma2, mu, rho, U, c0, fa, fR, bp, bq)


@numba.njit(cache=True)
def state_moments(l, t, counts, sums, sigma2, mu, fa, fR, bp, bq):
    """Mean and variance of the centred state of cluster l at day t."""
    k = counts[l, t]
    s2 = sigma2[t]
    prec = 1.0 / fR[l, t] + k / s2 + bp[l, t]
    info = fa[l, t] / fR[l, t] + (sums[l, t] - k * mu) / s2 + bq[l, t]
    return info / prec, 1.0 / prec


@numba.njit(cache=True)
def _delete(c, L, z, counts, sums, sizes, fa, fR, bp, bq, atoms):
    last = L - 1
    if c != last:
        counts[c, :] = counts[last, :]
        sums[c, :] = sums[last, :]
        sizes[c] = sizes[last]
        fa[c, :] = fa[last, :]
        fR[c, :] = fR[last, :]
        bp[c, :] = bp[last, :]
        bq[c, :] = bq[last, :]
        atoms[c, :] = atoms[last, :]
        for j in range(z.shape[0]):
            if z[j] == last:
                z[j] = c
    counts[last, :] = 0
    sums[last, :] = 0.0
    sizes[last] = 0
    return last


@numba.njit(cache=True)
def _pick(logw, K, u):
    mx = -np.inf
    for k in range(K):
        if logw[k] > mx:
            mx = logw[k]
    if not np.isfinite(mx):
        return -1
    tot = 0.0
    for k in range(K):
        logw[k] = math.exp(logw[k] - mx)
        tot += logw[k]
    target = u * tot
    acc = 0.0
    for k in range(K):
        acc += logw[k]
        if target < acc:
            return k
    return K - 1


@numba.njit(cache=True)
def assign_one(i, u, obs_day, obs_y, z, counts, sums, sizes, L, fa, fR, bp, bq, atoms,
               sigma2, mu, rho, U, alpha, c0, drop_obs_var, ignore_sizes, neutral, logw):
    """Collapsed Polya-urn move for observation i. Returns the new L (or -1)."""
    t = obs_day[i]
    y = obs_y[i]
    c = z[i]
    counts[c, t] -= 1
    sums[c, t] -= y
    sizes[c] -= 1
    removed = False
    if sizes[c] == 0:
        L = _delete(c, L, z, counts, sums, sizes, fa, fR, bp, bq, atoms)
        removed = True
    s2 = sigma2[t]
    yc = y - mu
    for l in range(L):
        lw = 0.0 if ignore_sizes else math.log(sizes[l])
        if not neutral:
            mean, var = state_moments(l, t, counts, sums, sigma2, mu, fa, fR, bp, bq)
            pv = var if drop_obs_var else var + s2
            d = yc - mean
            lw += -0.5 * (LOG_2PI + math.log(pv)) - 0.5 * d * d / pv
        logw[l] = lw
    lw = math.log(alpha)
    if not neutral:
        pv = c0 if drop_obs_var else c0 + s2
        lw += -0.5 * (LOG_2PI + math.log(pv)) - 0.5 * yc * yc / pv
    logw[L] = lw
    k = _pick(logw, L + 1, u)
    if k < 0:
        return -1
    counts[k, t] += 1
    sums[k, t] += y
    sizes[k] += 1
    z[i] = k
    if k == L:
        L += 1
        refresh(k, counts, sums, sigma2, mu, rho, U, c0, fa, fR, bp, bq)
        if not removed:
            refresh(c, counts, sums, sigma2, mu, rho, U, c0, fa, fR, bp, bq)
    elif removed or k != c:
        refresh(k, counts, sums, sigma2, mu, rho, U, c0, fa, fR, bp, bq)
        if not removed:
            refresh(c, counts, sums, sigma2, mu, rho, U, c0, fa, fR, bp, bq)
    return L


@numba.njit(cache=True)
def sweep(order, u, obs_day, obs_y, z, counts, sums, sizes, L, fa, fR, bp, bq, atoms,
          sigma2, mu, rho, U, alpha, c0, drop_obs_var, ignore_sizes, neutral):
    logw = np.empty(counts.shape[0] + 1)
    refresh_all(L, counts, sums, sigma2, mu, rho, U, c0, fa, fR, bp, bq)
    for j in range(order.shape[0]):
        L = assign_one(order[j], u[j], obs_day, obs_y, z, counts, sums, sizes, L, fa, fR, bp, bq,
                       atoms, sigma2, mu, rho, U, alpha, c0, drop_obs_var, ignore_sizes, neutral, logw)
        if L < 0:
            return -1
    return L


@numba.njit(cache=True)
def ffbs(l, counts, sums, sigma2, mu, rho, U, c0, normals, flip, out):
    """Draw the path of cluster l into ``out`` (uncentred)."""
    T = counts.shape[1] - 1
    m = np.empty(T + 1)
    C = np.empty(T + 1)
    a = np.empty(T + 1)
    R = np.empty(T + 1)
    m[0] = 0.0
    C[0] = c0
    for t in range(1, T + 1):
        a[t] = rho * m[t - 1]
        R[t] = rho * rho * C[t - 1] + U
        k = counts[l, t]
        if k > 0:
            v = sigma2[t] / k
            ybar = sums[l, t] / k - mu
            Q = R[t] + v
            m[t] = a[t] + R[t] / Q * (ybar - a[t])
            C[t] = R[t] * v / Q
        else:
            m[t] = a[t]
            C[t] = R[t]
    x = m[T] + math.sqrt(C[T]) * normals[T]
    out[T] = x + mu
    for t in range(T - 1, -1, -1):
        B = C[t] * rho / R[t + 1]
        if flip:
            B = -B
        d = m[t] + B * (x - a[t + 1])
        D = C[t] * U / R[t + 1]
        x = d + math.sqrt(D) * normals[t]
        out[t] = x + mu


@numba.njit(cache=True)
def resample_paths(L, counts, sums, sigma2, mu, rho, U, c0, normals, flip, atoms):
    for l in range(L):
        ffbs(l, counts, sums, sigma2, mu, rho, U, c0, normals[l], flip, atoms[l])


@numba.njit(cache=True)
def sweep_conditional(order, u, normals, obs_day, obs_y, z, counts, sums, sizes, L, fa, fR, bp, bq,
                      atoms, sigma2, mu, rho, U, alpha, c0):
    """Non-collapsed variant: existing clusters are scored with their sampled
    paths; a new cluster gets a path drawn from its single observation."""
    logw = np.empty(counts.shape[0] + 1)
    for j in range(order.shape[0]):
        i = order[j]
        t = obs_day[i]
        y = obs_y[i]
        c = z[i]
        counts[c, t] -= 1
        sums[c, t] -= y
        sizes[c] -= 1
        if sizes[c] == 0:
            L = _delete(c, L, z, counts, sums, sizes, fa, fR, bp, bq, atoms)
        s2 = sigma2[t]
        for l in range(L):
            d = y - atoms[l, t]
            logw[l] = math.log(sizes[l]) - 0.5 * (LOG_2PI + math.log(s2)) - 0.5 * d * d / s2
        pv = c0 + s2
        d = y - mu
        logw[L] = math.log(alpha) - 0.5 * (LOG_2PI + math.log(pv)) - 0.5 * d * d / pv
        k = _pick(logw, L + 1, u[j])
        if k < 0:
            return -1
        counts[k, t] += 1
        sums[k, t] += y
        sizes[k] += 1
        z[i] = k
        if k == L:
            L += 1
            ffbs(k, counts, sums, sigma2, mu, rho, U, c0, normals[j], False, atoms[k])
    return L


@numba.njit(cache=True)
def mean_loglik(crow, srow, sigma2, mu, rho, U, c0):
    """Log density of one cluster's daily means with its path integrated out.

    Terms that depend only on which observations share a day cancel in
    swap ratios and are dropped.
    """
    T = crow.shape[0] - 1
    m = 0.0
    C = c0
    ll = 0.0
    for t in range(1, T + 1):
        a = rho * m
        R = rho * rho * C + U
        k = crow[t]
        if k > 0:
            v = sigma2[t] / k
            d = srow[t] / k - mu - a
            Q = R + v
            ll += -0.5 * (LOG_2PI + math.log(Q)) - 0.5 * d * d / Q
            m = a + R / Q * d
            C = R * v / Q
        else:
            m = a
            C = R
    return ll


@numba.njit(cache=True)
def tail_swaps(days, pl, pm, u, z, obs_day, counts, sums, sizes, sigma2, mu, rho, U, c0):
    """Metropolis exchange of all data from ``days[j]`` onward between
    clusters ``pl[j]`` and ``pm[j]``. Returns the number accepted."""
    T = counts.shape[1] - 1
    cl = np.empty(T + 1, dtype=np.int64)
    cm = np.empty(T + 1, dtype=np.int64)
    sl = np.empty(T + 1)
    sm = np.empty(T + 1)
    accepted = 0
    for j in range(days.shape[0]):
        t0 = days[j]
        l = pl[j]
        m = pm[j]
        tl = 0
        tm = 0
        for t in range(t0, T + 1):
            tl += counts[l, t]
            tm += counts[m, t]
        if tl == 0 and tm == 0:
            continue
        nl = sizes[l] - tl + tm
        nm = sizes[m] - tm + tl
        if nl == 0 or nm == 0:
            continue
        for t in range(T + 1):
            if t < t0:
                cl[t] = counts[l, t]
                cm[t] = counts[m, t]
                sl[t] = sums[l, t]
                sm[t] = sums[m, t]
            else:
                cl[t] = counts[m, t]
                cm[t] = counts[l, t]
                sl[t] = sums[m, t]
                sm[t] = sums[l, t]
        log_ratio = (
            mean_loglik(cl, sl, sigma2, mu, rho, U, c0) + mean_loglik(cm, sm, sigma2, mu, rho, U, c0)
            - mean_loglik(counts[l], sums[l], sigma2, mu, rho, U, c0)
            - mean_loglik(counts[m], sums[m], sigma2, mu, rho, U, c0)
            + math.lgamma(nl) + math.lgamma(nm) - math.lgamma(sizes[l]) - math.lgamma(sizes[m])
        )
        if math.log(u[j]) < log_ratio:
            counts[l, :] = cl
            counts[m, :] = cm
            sums[l, :] = sl
            sums[m, :] = sm
            sizes[l] = nl
            sizes[m] = nm
            for i in range(z.shape[0]):
                if obs_day[i] >= t0:
                    if z[i] == l:
                        z[i] = m
                    elif z[i] == m:
                        z[i] = l
            accepted += 1
    return accepted
