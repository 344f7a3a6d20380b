"""m-projection of a single-group auxiliary distribution onto the factorized family.

Two routes are provided. :func:`exact_projection` marginalizes the auxiliary
distribution by enumerating every joint state. :func:`approx_projection`
replaces the interference-plus-noise seen by each symbol with a Gaussian that
has the same first two moments, which needs one ``N_u x N_u`` inverse per group
plus a rank-one correction per symbol.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .geometry import (
    ENUMERATION_CAP,
    MomentPair,
    enumerate_log_weights,
    log_marginals_to_theta,
    log_weight_marginals,
    marginal_moments,
)
from ._kernels import surrogate_update_direct
from .system import Alphabet

VAR_FLOOR = 1e-12
SM_DENOM_FLOOR = 1e-12


class ProjectionError(ArithmeticError):
    """The surrogate covariance lost positive definiteness or a marginal underflowed."""


@dataclass(frozen=True)
class GroupContext:
    y_u: np.ndarray
    G_u: np.ndarray
    noise_var: float
    alphabet: Alphabet
    d: np.ndarray

    def __post_init__(self):
        y_u = np.asarray(self.y_u, dtype=float)
        G_u = np.asarray(self.G_u, dtype=float)
        if G_u.ndim != 2 or y_u.shape != (G_u.shape[0],):
            raise ValueError(f"inconsistent group shapes: y_u {y_u.shape}, G_u {G_u.shape}")
        if G_u.shape[1] % 2:
            raise ValueError("G_u must have an even number (2K) of columns")
        if np.shape(self.d) != (G_u.shape[1], self.alphabet.size - 1):
            raise ValueError(f"prior shape {np.shape(self.d)} does not match G_u {G_u.shape}")
        if not self.noise_var > 0:
            raise ValueError(f"noise variance must be positive, got {self.noise_var}")
        object.__setattr__(self, "y_u", y_u)
        object.__setattr__(self, "G_u", G_u)

    @property
    def group_size(self) -> int:
        return self.G_u.shape[0]

    @property
    def n_users(self) -> int:
        return self.G_u.shape[1] // 2


class InversePath(enum.Enum):
    DIRECT = "direct-inverse"
    WOODBURY = "woodbury"


@dataclass(frozen=True)
class ComplexityEstimate:
    P: int
    Q: int
    chosen_path: InversePath


def estimate_complexity(n_users: int, group_size: int) -> ComplexityEstimate:
    """Real-multiplication counts of the direct (P) and Woodbury (Q) routes to ``A_u``."""
    K, N = int(n_users), int(group_size)
    P = N**3 + 2 * K * N**2
    Q = 8 * K**3 + 8 * K**2 * N + 2 * K * N**2
    return ComplexityEstimate(P, Q, InversePath.DIRECT if P <= Q else InversePath.WOODBURY)


def _symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _inv_spd(m, symmetric=True):
    try:
        inv = np.linalg.inv(m)
        return _symmetrize(inv) if symmetric else inv
    except np.linalg.LinAlgError as exc:
        raise ProjectionError(f"factorization of the surrogate covariance failed: {exc}") from exc


def a_matrix_direct(G_u, v_u, noise_var, symmetric=True):
    """``(G diag(v) G^T + noise_var I)^-1``; works on stacked leading dims.

    ``symmetric=False`` skips the explicit symmetrization of the result.
    """
    G_u = np.asarray(G_u, dtype=float)
    noise_var = np.asarray(noise_var, dtype=float)
    cov = (G_u * v_u[..., None, :]) @ np.swapaxes(G_u, -1, -2)
    idx = np.arange(G_u.shape[-2])
    cov[..., idx, idx] += noise_var[..., None]
    if symmetric:
        cov = _symmetrize(cov)
    return _inv_spd(cov, symmetric)


def a_matrix_woodbury(G_u, v_u, noise_var, symmetric=True):
    """Same matrix as :func:`a_matrix_direct` through a ``2K x 2K`` inner inverse."""
    G_u = np.asarray(G_u, dtype=float)
    noise_var = np.asarray(noise_var, dtype=float)[..., None, None]
    n = G_u.shape[-2]
    Gt = np.swapaxes(G_u, -1, -2)
    inner = Gt @ G_u / noise_var
    idx = np.arange(G_u.shape[-1])
    inner[..., idx, idx] += 1.0 / v_u
    inner_inv = _inv_spd(_symmetrize(inner) if symmetric else inner, symmetric)
    out = np.eye(n) / noise_var - G_u @ inner_inv @ Gt / noise_var**2
    return _symmetrize(out) if symmetric else out


def build_A_u(ctx: GroupContext, v_u) -> tuple[ComplexityEstimate, np.ndarray]:
    v_u = np.asarray(v_u, dtype=float)
    if v_u.shape != (ctx.G_u.shape[1],):
        raise ValueError(f"v_u has shape {v_u.shape}, expected ({ctx.G_u.shape[1]},)")
    if np.any(v_u < VAR_FLOOR):
        raise ValueError(f"variances must be floored at {VAR_FLOOR}")
    est = estimate_complexity(ctx.n_users, ctx.group_size)
    build = a_matrix_direct if est.chosen_path is InversePath.DIRECT else a_matrix_woodbury
    return est, build(ctx.G_u, v_u, ctx.noise_var)


def sherman_morrison_inverse(A_u, g, v) -> np.ndarray:
    """Inverse of ``A_u^-1 - v g g^T`` given ``A_u``."""
    A_u = np.asarray(A_u, dtype=float)
    g = np.asarray(g, dtype=float)
    Ag = A_u @ g
    denom = 1.0 - v * (g @ Ag)
    if denom < SM_DENOM_FLOOR:
        raise ProjectionError(f"Sherman-Morrison denominator {denom:.3e} below {SM_DENOM_FLOOR}")
    return A_u + (v / denom) * np.outer(Ag, Ag)


def surrogate_moments(ctx: GroupContext, theta_u, k: int, s_k: float):
    """Mean and covariance of the received group with symbol ``k`` pinned to ``s_k``.

    The other symbols follow the factorized distribution at ``theta_u``; noise
    is white with variance ``ctx.noise_var``.
    """
    mom = marginal_moments(theta_u, ctx.d, ctx.alphabet)
    g = ctx.G_u[:, k]
    mean = ctx.G_u @ mom.mean + g * (s_k - mom.mean[k])
    cov = (ctx.G_u * mom.var) @ ctx.G_u.T + ctx.noise_var * np.eye(ctx.group_size)
    cov -= mom.var[k] * np.outer(g, g)
    return mean, cov


@dataclass(frozen=True)
class ProjectionWorkspace:
    moments: MomentPair
    a: np.ndarray  # (2K, N_u), row k is a_{u,k}
    A_u: np.ndarray
    complexity: ComplexityEstimate
    surrogate_mean_shift: np.ndarray  # (2K,)
    surrogate_var: np.ndarray  # (2K,), inf where g_{u,k} = 0


def _surrogate_update(y_u, G_u, noise_var, theta_u, d, alphabet, path, symmetric=True):
    """Batched core shared by the single-group and the stacked entry points.

    Leading dimensions of ``y_u (..., N)``, ``G_u (..., N, 2K)``,
    ``noise_var (...)`` and ``theta_u (..., 2K, L-1)`` broadcast together.
    Returns the new EACS, a per-instance validity mask and intermediates.
    """
    mom = marginal_moments(theta_u, d, alphabet)
    v = np.maximum(mom.var, VAR_FLOOR)
    resid = y_u - np.einsum("...nk,...k->...n", G_u, mom.mean)
    build = a_matrix_direct if path is InversePath.DIRECT else a_matrix_woodbury
    A = build(G_u, v, noise_var, symmetric)
    AG = A @ G_u  # column k is A_u g_k
    q = np.einsum("...nk,...nk->...k", G_u, AG)
    denom = 1.0 - v * q
    # g_k^T A_u a_k with a_k = r + g_k mu_k
    b_dot_a = np.einsum("...nk,...n->...k", AG, resid) + q * mom.mean
    safe = np.where(denom > SM_DENOM_FLOOR, denom, 1.0)
    precision = q / safe  # 1 / tilde_v
    h = b_dot_a / safe  # g^T V^-1 a = tilde_mu / tilde_v
    pts = alphabet.points
    s0, sl = pts[0], pts[1:]
    theta0 = theta_u + 0.5 * precision[..., None] * (s0 * s0 - sl * sl) - h[..., None] * (s0 - sl)
    ok = np.all(denom > SM_DENOM_FLOOR, axis=-1) & np.all(precision >= 0, axis=-1)
    ok &= np.all(np.isfinite(theta0), axis=(-1, -2))
    return theta0, ok, dict(
        moments=mom, resid=resid, A=A, q=q, denom=denom, precision=precision, h=h
    )


def approx_projection(ctx: GroupContext, theta_u) -> tuple[np.ndarray, ProjectionWorkspace]:
    """EACS of the m-projection via the moment-matched Gaussian surrogate."""
    theta_u = np.asarray(theta_u, dtype=float)
    if theta_u.shape != ctx.d.shape:
        raise ValueError(f"theta_u shape {theta_u.shape} does not match {ctx.d.shape}")
    est = estimate_complexity(ctx.n_users, ctx.group_size)
    theta0, ok, ws = _surrogate_update(
        ctx.y_u, ctx.G_u, ctx.noise_var, theta_u, ctx.d, ctx.alphabet, est.chosen_path
    )
    bad = np.flatnonzero(ws["denom"] <= SM_DENOM_FLOOR)
    if bad.size:
        raise ProjectionError(
            f"Sherman-Morrison denominator {ws['denom'][bad[0]]:.3e} below {SM_DENOM_FLOOR} "
            f"for symbol {bad[0]}"
        )
    if np.any(ws["precision"] < 0):
        raise ProjectionError("non-positive surrogate variance")
    if not ok:
        raise ProjectionError("non-finite projected EACS")
    prec, h = ws["precision"], ws["h"]
    with np.errstate(divide="ignore", invalid="ignore"):
        tilde_v = np.where(prec > 0, 1.0 / prec, np.inf)
        tilde_mu = np.where(prec > 0, h / prec, ws["moments"].mean)
    mean = ws["moments"].mean
    a = ws["resid"][None, :] + (ctx.G_u * mean).T
    workspace = ProjectionWorkspace(
        moments=ws["moments"],
        a=a,
        A_u=ws["A"],
        complexity=est,
        surrogate_mean_shift=tilde_mu,
        surrogate_var=tilde_v,
    )
    return theta0, workspace


def approx_projection_stacked(y_u, G_u, noise_var, theta_u, d, alphabet: Alphabet, compiled: bool = True):
    """Approximate projection over stacked groups/instances.

    ``G_u`` is ``(..., N_u, 2K)``. Returns ``(theta0u, ok)`` where ``ok`` flags
    instances whose surrogate stayed positive definite; no exception is raised.

    When the direct-inverse path is chosen and ``d`` is shared across the
    stack, the work goes to a compiled kernel unless ``compiled`` is false.
    """
    G_u = np.asarray(G_u, dtype=float)
    est = estimate_complexity(G_u.shape[-1] // 2, G_u.shape[-2])
    d = np.asarray(d, dtype=float)
    if compiled and est.chosen_path is InversePath.DIRECT and d.ndim == 2:
        theta_u = np.asarray(theta_u, dtype=float)
        lead = np.broadcast_shapes(
            G_u.shape[:-2], np.shape(y_u)[:-1], np.shape(noise_var), theta_u.shape[:-2]
        )
        n, m = G_u.shape[-2:]
        flat = (int(np.prod(lead, dtype=int)),)
        theta0, ok = surrogate_update_direct(
            np.ascontiguousarray(np.broadcast_to(y_u, lead + (n,)), dtype=float).reshape(flat + (n,)),
            np.ascontiguousarray(np.broadcast_to(G_u, lead + (n, m))).reshape(flat + (n, m)),
            np.ascontiguousarray(np.broadcast_to(noise_var, lead), dtype=float).reshape(flat),
            np.ascontiguousarray(np.broadcast_to(theta_u, lead + d.shape)).reshape(flat + d.shape),
            np.ascontiguousarray(d),
            alphabet.points,
            VAR_FLOOR,
            SM_DENOM_FLOOR,
        )
        return theta0.reshape(lead + d.shape), ok.reshape(lead)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        theta0, ok, _ = _surrogate_update(
            y_u, G_u, noise_var, theta_u, d, alphabet, est.chosen_path, symmetric=False
        )
    return theta0, ok


def exact_projection(ctx: GroupContext, theta_u, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """EACS of the m-projection by exhaustive marginalization of the group's distribution."""
    theta_u = np.asarray(theta_u, dtype=float)
    if theta_u.shape != ctx.d.shape:
        raise ValueError(f"theta_u shape {theta_u.shape} does not match {ctx.d.shape}")
    logw = enumerate_log_weights(ctx.G_u, ctx.y_u, ctx.noise_var, ctx.alphabet, ctx.d + theta_u, cap)
    logm = log_weight_marginals(logw, ctx.alphabet.size, ctx.G_u.shape[1])
    try:
        return log_marginals_to_theta(logm, ctx.d)
    except ValueError as exc:
        raise ProjectionError(str(exc)) from exc
