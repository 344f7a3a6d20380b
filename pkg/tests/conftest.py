import itertools

import numpy as np
import pytest

from giga.system import ComplexSystem, lift_to_real, make_alphabet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_real_system(rng, n_users, n_rx, mod_order=4, snr_db=10.0, priors=None):
    """Random complex instance lifted to real form; also returns the true level indices."""
    H = (rng.standard_normal((n_rx, n_users)) + 1j * rng.standard_normal((n_rx, n_users))) / np.sqrt(2 * n_rx)
    alphabet = make_alphabet(mod_order)
    idx = rng.integers(0, alphabet.size, 2 * n_users)
    sym = alphabet.points[idx]
    s = sym[:n_users] + 1j * sym[n_users:]
    sigma2 = n_users / 10 ** (snr_db / 10)
    noise = np.sqrt(sigma2 / 2) * (rng.standard_normal(n_rx) + 1j * rng.standard_normal(n_rx))
    return lift_to_real(ComplexSystem(H, H @ s + noise, sigma2, mod_order), priors), idx


def brute_marginals(G, y, noise_var, points, natural=None):
    """Posterior marginals over ``points^M`` by explicit loops; ``natural`` is ``(M, L-1)``."""
    M = G.shape[1]
    L = len(points)
    logits = np.zeros((M, L))
    if natural is not None:
        logits[:, 1:] = natural
    logw, states = [], []
    for idx in itertools.product(range(L), repeat=M):
        s = np.array([points[i] for i in idx])
        r = y - G @ s
        logw.append(sum(logits[k, i] for k, i in enumerate(idx)) - 0.5 * float(r @ r) / noise_var)
        states.append(idx)
    logw = np.array(logw)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    out = np.zeros((M, L))
    for wi, idx in zip(w, states):
        for k, i in enumerate(idx):
            out[k, i] += wi
    return out


def mixture_moments(ctx, probs, k, s_k):
    """Moments of ``G_u s + n`` with ``s_k`` pinned, by looping over every other symbol."""
    N, M = ctx.G_u.shape
    pts = ctx.alphabet.points
    mean = np.zeros(N)
    second = np.zeros((N, N))
    others = [j for j in range(M) if j != k]
    for idx in itertools.product(range(len(pts)), repeat=M - 1):
        s = np.zeros(M)
        s[k] = s_k
        w = 1.0
        for j, i in zip(others, idx):
            s[j] = pts[i]
            w *= probs[j, i]
        x = ctx.G_u @ s
        mean += w * x
        second += w * np.outer(x, x)
    return mean, second - np.outer(mean, mean) + ctx.noise_var * np.eye(N)
