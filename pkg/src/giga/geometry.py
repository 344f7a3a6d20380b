"""Fully factorized exponential family over finite alphabets.

An e-affine coordinate array ``theta`` has shape ``(..., 2K, L-1)``; entry
``[k, l-1]`` is the natural parameter attached to the indicator ``s_k == S[l]``.
Level 0 is the reference level and carries no parameter. ``d`` (log prior
ratios) uses the same layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .system import PROB_FLOOR, Alphabet, RealSystem

ENUMERATION_CAP = 2**20
_CHUNK = 2**15


class EnumerationCapError(ValueError):
    pass


def _check_shapes(theta, d):
    theta = np.asarray(theta, dtype=float)
    d = np.asarray(d, dtype=float)
    if theta.shape[-1:] != d.shape[-1:] or np.broadcast_shapes(theta.shape, d.shape) != theta.shape:
        raise ValueError(f"theta shape {theta.shape} does not match prior shape {d.shape}")
    return theta, d


def _full_logits(theta, d):
    """Prepend the reference logit 0 to ``d + theta``; shape ``(..., 2K, L)``."""
    nat = theta + d
    zeros = np.zeros(nat.shape[:-1] + (1,))
    return np.concatenate([zeros, nat], axis=-1)


def theta_to_marginals(theta, d) -> np.ndarray:
    """Per-component probabilities of the factorized distribution, ``(..., 2K, L)``."""
    theta, d = _check_shapes(theta, d)
    logits = _full_logits(theta, d)
    # L is small: elementwise passes beat reductions along a short trailing axis
    top = logits[..., 0]
    for j in range(1, logits.shape[-1]):
        top = np.maximum(top, logits[..., j])
    w = np.exp(logits - top[..., None])
    total = w[..., 0].copy()
    for j in range(1, w.shape[-1]):
        total += w[..., j]
    return w / total[..., None]


def marginals_to_theta(marginals, d) -> np.ndarray:
    """Inverse of :func:`theta_to_marginals`: ``ln(m_l / m_0) - d_l``."""
    m = np.asarray(marginals, dtype=float)
    d = np.asarray(d, dtype=float)
    if m.shape[-1] != d.shape[-1] + 1 or np.broadcast_shapes(m.shape[:-1], d.shape[:-1]) != m.shape[:-1]:
        raise ValueError(f"marginals shape {m.shape} does not match prior shape {d.shape}")
    if np.any(~(m > PROB_FLOOR)):
        raise ValueError("marginal probability at or below the floor; EACS would be infinite")
    logm = np.log(m)
    return logm[..., 1:] - logm[..., :1] - d


def log_marginals_to_theta(log_marginals, d) -> np.ndarray:
    """Same as :func:`marginals_to_theta` but from (unnormalized) log-probabilities."""
    logm = np.asarray(log_marginals, dtype=float)
    logm = logm - logsumexp(logm, axis=-1, keepdims=True)
    if np.any(~(logm > np.log(PROB_FLOOR))):
        raise ValueError("marginal probability at or below the floor; EACS would be infinite")
    return logm[..., 1:] - logm[..., :1] - d


def free_energy(theta_row, d_row) -> float:
    """``ln(1 + sum_l exp(d_l + theta_l))`` for a single component."""
    theta_row, d_row = _check_shapes(np.atleast_1d(theta_row)[None], np.atleast_1d(d_row)[None])
    return float(logsumexp(_full_logits(theta_row, d_row), axis=-1)[0])


@dataclass(frozen=True)
class MomentPair:
    mean: np.ndarray
    var: np.ndarray


def marginal_moments(theta, d, alphabet: Alphabet) -> MomentPair:
    """Mean and variance of every component under the factorized distribution."""
    p = theta_to_marginals(theta, d)
    pts = alphabet.points
    mean = p @ pts
    second = p @ (pts * pts)
    # cancellation can leave tiny negatives when a marginal is nearly one point
    var = np.maximum(second - mean * mean, 0.0)
    return MomentPair(mean, var)


def kl_divergence(p, q) -> float:
    """``sum p ln(p/q)`` with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    if np.any(q <= 0):
        raise ValueError("q must be strictly positive")
    if np.any(p < 0):
        raise ValueError("p must be non-negative")
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


# --- exhaustive enumeration ---------------------------------------------------


def state_indices(n_levels: int, n_vars: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Level indices of joint states ``start..stop`` in lexicographic order.

    The first variable varies slowest, matching ``np.reshape`` to ``(L,)*n``.
    """
    total = n_levels**n_vars
    stop = total if stop is None else stop
    flat = np.arange(start, stop)
    out = np.empty((flat.size, n_vars), dtype=np.intp)
    for j in range(n_vars - 1, -1, -1):
        flat, out[:, j] = np.divmod(flat, n_levels)
    return out


def _check_cap(n_levels: int, n_vars: int, cap: int) -> int:
    total = n_levels**n_vars
    if total > cap:
        raise EnumerationCapError(
            f"{n_levels}^{n_vars} = {total} joint states exceeds the enumeration cap {cap}"
        )
    return total


def enumerate_log_weights(G, y, noise_var, alphabet: Alphabet, natural, cap=ENUMERATION_CAP):
    """Unnormalized log-weights ``natural^T t - ||y - G s||^2 / (2 noise_var)``.

    ``natural`` is ``d + theta`` with shape ``(2K, L-1)``. Returns a flat array in
    lexicographic state order.
    """
    G = np.asarray(G, dtype=float)
    y = np.asarray(y, dtype=float)
    n_vars = G.shape[1]
    L = alphabet.size
    total = _check_cap(L, n_vars, cap)
    logits = np.concatenate([np.zeros((n_vars, 1)), np.asarray(natural, dtype=float)], axis=1)
    cols = np.arange(n_vars)
    out = np.empty(total)
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        idx = state_indices(L, n_vars, start, stop)
        s = alphabet.points[idx]
        resid = y - s @ G.T
        out[start:stop] = logits[cols, idx].sum(axis=1) - 0.5 * np.einsum("ij,ij->i", resid, resid) / noise_var
    return out


def log_weight_marginals(logw: np.ndarray, n_levels: int, n_vars: int) -> np.ndarray:
    """Log of the (unnormalized) per-variable marginal sums, shape ``(n_vars, L)``."""
    out = np.empty((n_vars, n_levels))
    for k in range(n_vars):
        view = logw.reshape(n_levels**k, n_levels, n_levels ** (n_vars - k - 1))
        out[k] = logsumexp(view, axis=(0, 2))
    return out


@dataclass(frozen=True)
class ExactPosterior:
    table: np.ndarray  # flat, lexicographic over S^{2K}
    marginals: np.ndarray  # (2K, L)


def exact_posterior(real_sys: RealSystem, cap: int = ENUMERATION_CAP) -> ExactPosterior:
    """Exact posterior of ``s`` given ``y`` by enumerating every joint state."""
    n_vars = real_sys.n_real_users
    L = real_sys.alphabet.size
    logw = enumerate_log_weights(
        real_sys.G, real_sys.y, real_sys.noise_var, real_sys.alphabet, real_sys.prior_nat, cap
    )
    log_z = logsumexp(logw)
    logm = log_weight_marginals(logw, L, n_vars) - log_z
    return ExactPosterior(table=np.exp(logw - log_z), marginals=np.exp(logm))


def factorized_table(theta, d) -> np.ndarray:
    """Joint table of the factorized distribution in lexicographic state order."""
    m = theta_to_marginals(theta, d)
    table = np.ones(1)
    for row in m:
        table = np.multiply.outer(table, row).ravel()
    return table
