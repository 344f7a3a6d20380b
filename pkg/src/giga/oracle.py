"""Small-instance equivalence checks against brute-force enumeration.

Every check draws random instances small enough to enumerate with
``itertools.product`` and compares a fast path with the enumerated answer.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .detector import GigaConfig, ProjectionMode, run_giga
from .geometry import marginal_moments, theta_to_marginals
from .projection import (
    GroupContext,
    a_matrix_direct,
    a_matrix_woodbury,
    sherman_morrison_inverse,
    surrogate_moments,
)
from .system import ComplexSystem, lift_to_real, make_alphabet


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    max_err: float
    tol: float
    n_cases: int
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: max_err={self.max_err:.3e} tol={self.tol:.0e} "
            f"cases={self.n_cases} time={self.seconds:.2f}s"
        )


def brute_posterior_marginals(G, y, noise_var, points, log_prior=None) -> np.ndarray:
    """Per-component posterior marginals of ``y = G s + n`` over ``s in points^M``."""
    M = G.shape[1]
    L = len(points)
    logw, states = [], []
    for idx in itertools.product(range(L), repeat=M):
        s = points[list(idx)]
        r = y - G @ s
        lw = -0.5 * (r @ r) / noise_var
        if log_prior is not None:
            lw += sum(log_prior[k, i] for k, i in enumerate(idx))
        logw.append(lw)
        states.append(idx)
    logw = np.array(logw)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    out = np.zeros((M, L))
    for wi, idx in zip(w, states):
        for k, i in enumerate(idx):
            out[k, i] += wi
    return out


def brute_mixture_moments(G_u, noise_var, probs, points, k, s_k):
    """Mean and covariance of ``G_u s + n`` with ``s_k = s_k`` and the rest drawn from ``probs``."""
    N, M = G_u.shape
    L = len(points)
    mean = np.zeros(N)
    second = np.zeros((N, N))
    for idx in itertools.product(range(L), repeat=M - 1):
        full = list(idx[:k]) + [None] + list(idx[k:])
        weight = 1.0
        s = np.empty(M)
        for j, i in enumerate(full):
            if j == k:
                s[j] = s_k
            else:
                weight *= probs[j, i]
                s[j] = points[i]
        x = G_u @ s
        mean += weight * x
        second += weight * np.outer(x, x)
    return mean, second - np.outer(mean, mean) + noise_var * np.eye(N)


def _random_system(rng, n_users, n_rx, mod_order, snr_db):
    H = (rng.standard_normal((n_rx, n_users)) + 1j * rng.standard_normal((n_rx, n_users))) / np.sqrt(2 * n_rx)
    alphabet = make_alphabet(mod_order)
    sym = alphabet.points[rng.integers(0, alphabet.size, 2 * n_users)]
    s = sym[:n_users] + 1j * sym[n_users:]
    sigma2 = n_users / 10 ** (snr_db / 10)
    noise = np.sqrt(sigma2 / 2) * (rng.standard_normal(n_rx) + 1j * rng.standard_normal(n_rx))
    return lift_to_real(ComplexSystem(H, H @ s + noise, sigma2, mod_order))


def check_exact_path(rng, n_cases=50, tol=1e-9) -> CheckResult:
    """One undamped exact-projection iteration with ``U = 1`` equals the posterior."""
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(n_cases):
        real_sys = _random_system(rng, int(rng.integers(1, 3)), int(rng.integers(1, 4)), 4, rng.uniform(0, 15))
        cfg = GigaConfig(n_groups=1, damping=1.0, max_iters=1, projection_mode=ProjectionMode.EXACT)
        result, _ = run_giga(real_sys, cfg)
        ref = brute_posterior_marginals(real_sys.G, real_sys.y, real_sys.noise_var, real_sys.alphabet.points)
        worst = max(worst, float(np.abs(result.marginals - ref).max()))
    return CheckResult("exact-path", worst <= tol, worst, tol, n_cases, time.perf_counter() - t0)


def check_surrogate_moments(rng, n_cases=100, tol=1e-10) -> CheckResult:
    """Closed-form surrogate mean/covariance against the enumerated mixture."""
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(n_cases):
        K = int(rng.integers(1, 3))
        N = int(rng.integers(1, 5))
        alphabet = make_alphabet(int(rng.choice([4, 16])))
        L = alphabet.size
        ctx = GroupContext(
            rng.standard_normal(N), rng.standard_normal((N, 2 * K)), float(rng.uniform(0.05, 2.0)),
            alphabet, 0.3 * rng.standard_normal((2 * K, L - 1)),
        )
        theta = rng.standard_normal((2 * K, L - 1))
        k = int(rng.integers(0, 2 * K))
        s_k = float(alphabet.points[rng.integers(0, L)])
        mean, cov = surrogate_moments(ctx, theta, k, s_k)
        probs = theta_to_marginals(theta, ctx.d)
        ref_mean, ref_cov = brute_mixture_moments(ctx.G_u, ctx.noise_var, probs, alphabet.points, k, s_k)
        worst = max(worst, float(np.abs(mean - ref_mean).max()), float(np.abs(cov - ref_cov).max()))
    return CheckResult("surrogate-moments", worst <= tol, worst, tol, n_cases, time.perf_counter() - t0)


def check_matrix_identities(rng, n_cases=200, tol=1e-8) -> CheckResult:
    """Rank-one update and both routes to ``A_u`` against ``numpy.linalg.inv``.

    Errors are relative to the largest entry of the reference.
    """
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(n_cases):
        N = int(rng.integers(1, 17))
        M = int(rng.integers(1, 9)) * 2
        G = rng.standard_normal((N, M)) / np.sqrt(N)
        v = rng.uniform(1e-3, 1.0, M)
        nv = float(rng.uniform(0.05, 2.0))
        cov = (G * v) @ G.T + nv * np.eye(N)
        ref = np.linalg.inv(cov)
        scale = np.abs(ref).max()
        A_d = a_matrix_direct(G, v, nv)
        A_w = a_matrix_woodbury(G, v, nv)
        worst = max(worst, np.abs(A_d - ref).max() / scale, np.abs(A_w - ref).max() / scale)
        k = int(rng.integers(0, M))
        g = G[:, k]
        ref_k = np.linalg.inv(cov - v[k] * np.outer(g, g))
        sm = sherman_morrison_inverse(A_d, g, v[k])
        worst = max(worst, np.abs(sm - ref_k).max() / np.abs(ref_k).max())
    return CheckResult("matrix-identities", worst <= tol, float(worst), tol, n_cases, time.perf_counter() - t0)


def check_moment_formula(rng, n_cases=100, tol=1e-13) -> CheckResult:
    """Closed-form marginal moments against a direct sum over the alphabet."""
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(n_cases):
        alphabet = make_alphabet(int(rng.choice([4, 16, 64])))
        L = alphabet.size
        theta = rng.standard_normal((3, L - 1))
        d = 0.5 * rng.standard_normal((3, L - 1))
        mom = marginal_moments(theta, d, alphabet)
        for k in range(3):
            w = np.exp(np.concatenate([[0.0], theta[k] + d[k]]))
            w /= w.sum()
            m = sum(wi * p for wi, p in zip(w, alphabet.points))
            var = sum(wi * (p - m) ** 2 for wi, p in zip(w, alphabet.points))
            worst = max(worst, abs(mom.mean[k] - m), abs(mom.var[k] - var))
    return CheckResult("marginal-moments", worst <= tol, float(worst), tol, n_cases, time.perf_counter() - t0)


def run_all(seed: int = 0, scale: float = 1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)

    def n(base):
        return max(1, int(round(base * scale)))

    return [
        check_exact_path(rng, n(50)),
        check_surrogate_moments(rng, n(100)),
        check_matrix_identities(rng, n(200)),
        check_moment_formula(rng, n(100)),
    ]
