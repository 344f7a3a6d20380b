"""Linear MMSE detector with per-component hard decisions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .detector import assemble_complex
from .system import Alphabet, RealSystem


@dataclass(frozen=True)
class LmmseResult:
    soft: np.ndarray
    real_decisions: np.ndarray
    complex_decisions: np.ndarray


def nearest_indices(soft, alphabet: Alphabet) -> np.ndarray:
    """Index of the closest alphabet point; ties go to the lower index."""
    dist = np.abs(np.asarray(soft)[..., None] - alphabet.points)
    return np.argmin(dist, axis=-1)


def lmmse_soft(G, y, noise_var) -> np.ndarray:
    """``(G^T G + noise_var I)^-1 G^T y`` through a Cholesky solve."""
    G = np.asarray(G, dtype=float)
    gram = G.T @ G
    gram[np.diag_indices_from(gram)] += noise_var
    try:
        factor = cho_factor(gram, lower=True, check_finite=True)
    except LinAlgError as exc:
        raise LinAlgError(f"LMMSE normal matrix is numerically singular: {exc}") from exc
    return cho_solve(factor, G.T @ y)


def lmmse_soft_batch(G, y, noise_var) -> np.ndarray:
    """Stacked variant for ``G (B, N, M)``, ``y (B, N)``, ``noise_var (B,)``."""
    G = np.asarray(G, dtype=float)
    Gt = np.swapaxes(G, -1, -2)
    gram = Gt @ G
    idx = np.arange(G.shape[-1])
    gram[..., idx, idx] += np.asarray(noise_var, dtype=float)[..., None]
    chol = np.linalg.cholesky(gram)
    rhs = np.einsum("...mn,...n->...m", Gt, y)
    # two triangular solves through the batched general solver
    z = np.linalg.solve(chol, rhs[..., None])
    return np.linalg.solve(np.swapaxes(chol, -1, -2), z)[..., 0]


def lmmse_detect(real_sys: RealSystem) -> LmmseResult:
    if not real_sys.noise_var > 0:
        raise ValueError("LMMSE requires a positive noise variance")
    soft = lmmse_soft(real_sys.G, real_sys.y, real_sys.noise_var)
    dec = real_sys.alphabet.points[nearest_indices(soft, real_sys.alphabet)]
    return LmmseResult(soft=soft, real_decisions=dec, complex_decisions=assemble_complex(dec))
