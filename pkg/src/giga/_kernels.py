"""Compiled inner loop of the stacked approximate projection (direct-inverse path).

Each stacked group is processed independently: moments of the factorized
marginals, a Cholesky factor of ``G diag(v) G^T + noise_var I``, and forward
solves that give ``g_k^T A g_k`` and ``g_k^T A r`` without forming ``A``. The
numpy implementation in :mod:`giga.projection` is the reference this kernel
is tested against.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def surrogate_update_direct(y, G, noise_var, theta, d, points, var_floor, denom_floor):
    """``y (B,N)``, ``G (B,N,M)``, ``noise_var (B,)``, ``theta (B,M,L-1)``, ``d (M,L-1)``.

    Returns ``(theta0 (B,M,L-1), ok (B,))``. Rows with ``ok`` false hold
    unspecified values.
    """
    B, N, M = G.shape
    L = points.shape[0]
    theta0 = np.empty_like(theta)
    ok = np.ones(B, dtype=np.bool_)
    mean = np.empty(M)
    v = np.empty(M)
    logit = np.empty(L)
    resid = np.empty(N)
    chol = np.empty((N, N))
    W = np.empty((N, M))
    z = np.empty(N)
    s0 = points[0]
    Gv = np.empty((N, M))
    for b in range(B):
        Gb = G[b]
        for k in range(M):
            top = 0.0
            logit[0] = 0.0
            for l in range(1, L):
                logit[l] = d[k, l - 1] + theta[b, k, l - 1]
                if logit[l] > top:
                    top = logit[l]
            tot = 0.0
            m1 = 0.0
            m2 = 0.0
            for l in range(L):
                w = math.exp(logit[l] - top)
                tot += w
                m1 += w * points[l]
                m2 += w * points[l] * points[l]
            m1 /= tot
            m2 /= tot
            mean[k] = m1
            var = m2 - m1 * m1
            v[k] = var if var > var_floor else var_floor
        for n in range(N):
            acc = y[b, n]
            for k in range(M):
                acc -= Gb[n, k] * mean[k]
                Gv[n, k] = Gb[n, k] * v[k]
            resid[n] = acc
        # lower Cholesky factor of the surrogate covariance
        good = True
        for i in range(N):
            for j in range(i + 1):
                acc = 0.0
                for k in range(M):
                    acc += Gv[i, k] * Gb[j, k]
                if i == j:
                    acc += noise_var[b]
                for p in range(j):
                    acc -= chol[i, p] * chol[j, p]
                if i == j:
                    if not acc > 0.0:
                        good = False
                        break
                    chol[i, i] = math.sqrt(acc)
                else:
                    chol[i, j] = acc / chol[j, j]
            if not good:
                break
        if not good:
            ok[b] = False
            continue
        for i in range(N):
            for k in range(M):
                acc = Gb[i, k]
                for p in range(i):
                    acc -= chol[i, p] * W[p, k]
                W[i, k] = acc / chol[i, i]
            acc = resid[i]
            for p in range(i):
                acc -= chol[i, p] * z[p]
            z[i] = acc / chol[i, i]
        for k in range(M):
            q = 0.0
            ga = 0.0
            for n in range(N):
                q += W[n, k] * W[n, k]
                ga += W[n, k] * z[n]
            denom = 1.0 - v[k] * q
            if not denom > denom_floor:
                ok[b] = False
                break
            precision = q / denom
            h = (ga + q * mean[k]) / denom
            for l in range(1, L):
                sl = points[l]
                val = theta[b, k, l - 1] + 0.5 * precision * (s0 * s0 - sl * sl) - h * (s0 - sl)
                if not math.isfinite(val):
                    ok[b] = False
                theta0[b, k, l - 1] = val
    return theta0, ok
