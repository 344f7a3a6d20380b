"""Grouped information-geometric detector (GIGA) and MPM decisions."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .geometry import theta_to_marginals
from .projection import GroupContext, approx_projection, approx_projection_stacked, exact_projection
from .system import Alphabet, RealSystem, make_grouping


class ProjectionMode(enum.Enum):
    APPROXIMATE = "approximate"
    EXACT = "exact-oracle"


class DivergenceError(ArithmeticError):
    def __init__(self, iteration: int, msg: str = "non-finite EACS"):
        super().__init__(f"{msg} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class GigaConfig:
    n_groups: int
    damping: float = 0.3
    max_iters: int = 50
    tol: float = 1e-6
    projection_mode: ProjectionMode = ProjectionMode.APPROXIMATE
    record_history: bool = False

    def __post_init__(self):
        object.__setattr__(self, "projection_mode", ProjectionMode(self.projection_mode))
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.n_groups) != self.n_groups or self.n_groups < 1:
            raise ValueError(f"n_groups must be a positive integer, got {self.n_groups}")


@dataclass
class Trace:
    deltas: list[float] = field(default_factory=list)
    decisions: list[np.ndarray] | None = None
    xi: list[np.ndarray] | None = None


@dataclass
class GigaState:
    theta0: np.ndarray
    theta_u: np.ndarray  # (U, 2K, L-1)
    iteration: int
    trace: Trace


@dataclass(frozen=True)
class DetectionResult:
    marginals: np.ndarray
    real_decisions: np.ndarray
    complex_decisions: np.ndarray
    iterations_used: int
    converged: bool


def mpm_indices(marginals) -> np.ndarray:
    """Row-wise argmax; ``np.argmax`` returns the first maximum, i.e. the lowest level."""
    return np.argmax(np.asarray(marginals), axis=-1)


def mpm_decide(marginals, alphabet: Alphabet) -> np.ndarray:
    return alphabet.points[mpm_indices(marginals)]


def assemble_complex(real_decisions) -> np.ndarray:
    """``s[:K] + 1j * s[K:]`` along the last axis."""
    s = np.asarray(real_decisions, dtype=float)
    if s.shape[-1] % 2:
        raise ValueError(f"expected an even number of real components, got {s.shape[-1]}")
    k = s.shape[-1] // 2
    return s[..., :k] + 1j * s[..., k:]


def _iterate(project, theta_u, theta0, cfg: GigaConfig, trace: Trace | None = None, d=None):
    """Damped fixed-point loop over a batch of independent instances.

    ``project(theta_u, idx)`` maps active instances' ``(B', U, 2K, L-1)`` EACS
    to their projections plus a per-instance ``ok`` mask. Instances stop
    updating once converged or flagged.
    """
    alpha = cfg.damping
    B = theta0.shape[0]
    active = np.ones(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    diverged = np.zeros(B, dtype=bool)
    diverged_at = np.full(B, -1)
    last_delta = np.full(B, np.nan)
    for t in range(cfg.max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        th_u = theta_u[idx]
        th0 = theta0[idx]
        proj, ok = project(th_u, idx)
        xi = proj - th_u
        total = xi.sum(axis=1)
        new_u = alpha * (total[:, None] - xi) + (1 - alpha) * th_u
        new_0 = alpha * total + (1 - alpha) * th0
        with np.errstate(invalid="ignore"):
            delta = np.max(np.abs(new_0 - th0), axis=(-1, -2))
        finite = ok & np.isfinite(new_0).all(axis=(-1, -2)) & np.isfinite(new_u).all(axis=(-1, -2, -3))
        finite &= np.isfinite(delta)

        bad = idx[~finite]
        diverged[bad] = True
        diverged_at[bad] = t + 1
        active[bad] = False

        good = idx[finite]
        theta_u[good] = new_u[finite]
        theta0[good] = new_0[finite]
        iters[good] = t + 1
        last_delta[good] = delta[finite]
        done = good[delta[finite] < cfg.tol]
        converged[done] = True
        active[done] = False

        if trace is not None and finite.all():
            trace.deltas.append(float(delta[0]))
            if trace.xi is not None:
                trace.xi.append(xi[0].copy())
            if trace.decisions is not None:
                trace.decisions.append(mpm_indices(theta_to_marginals(new_0[0], d)))
    return iters, converged, diverged, diverged_at, last_delta


def run_giga(real_sys: RealSystem, cfg: GigaConfig, theta0_init=None):
    """Run the detector on one received vector.

    Returns ``(DetectionResult, GigaState)``. ``theta0_init`` warm-starts the
    factorized approximation; each group's EACS then starts at the share
    ``(U-1)/U`` of it that the other groups would contribute.
    """
    grouping = make_grouping(real_sys, cfg.n_groups)
    U = grouping.n_groups
    d = real_sys.prior_nat
    alphabet = real_sys.alphabet
    theta0 = np.zeros((1,) + d.shape)
    theta_u = np.zeros((1, U) + d.shape)
    if theta0_init is not None:
        theta0_init = np.asarray(theta0_init, dtype=float)
        if theta0_init.shape != d.shape:
            raise ValueError(f"theta0_init shape {theta0_init.shape} does not match {d.shape}")
        theta0[0] = theta0_init
        theta_u[0] = theta0_init * (U - 1) / U

    contexts = [
        GroupContext(grouping.sub_received[u], grouping.sub_channels[u], real_sys.noise_var, alphabet, d)
        for u in range(U)
    ]

    if cfg.projection_mode is ProjectionMode.EXACT:

        def project(th_u, idx):
            out = np.stack([exact_projection(contexts[u], th_u[0, u]) for u in range(U)])
            return out[None], np.ones(1, dtype=bool)

    else:

        def project(th_u, idx):
            out, ok = approx_projection_stacked(
                grouping.sub_received[None], grouping.sub_channels[None],
                np.array([real_sys.noise_var])[:, None], th_u, d, alphabet,
            )
            return out, ok.all(axis=-1)

    trace = Trace()
    if cfg.record_history:
        trace.decisions, trace.xi = [], []
    iters, converged, diverged, diverged_at, _ = _iterate(project, theta_u, theta0, cfg, trace, d)
    if diverged[0]:
        if cfg.projection_mode is ProjectionMode.APPROXIMATE:
            # replay the failing step with the checked entry point to surface the cause
            for u in range(U):
                approx_projection(contexts[u], theta_u[0, u])
        raise DivergenceError(int(diverged_at[0]))

    marginals = theta_to_marginals(theta0[0], d)
    real_dec = mpm_decide(marginals, alphabet)
    result = DetectionResult(
        marginals=marginals,
        real_decisions=real_dec,
        complex_decisions=assemble_complex(real_dec),
        iterations_used=int(iters[0]),
        converged=bool(converged[0]),
    )
    state = GigaState(theta0=theta0[0], theta_u=theta_u[0], iteration=int(iters[0]), trace=trace)
    return result, state


@dataclass(frozen=True)
class BatchOutcome:
    marginals: np.ndarray  # (B, 2K, L); NaN rows for diverged instances
    iterations: np.ndarray
    converged: np.ndarray
    diverged: np.ndarray


def run_giga_batch(G, y, noise_var, alphabet: Alphabet, d, cfg: GigaConfig) -> BatchOutcome:
    """Approximate-mode detector over a batch of independent instances.

    ``G`` is ``(B, 2N_r, 2K)``, ``y`` is ``(B, 2N_r)`` and ``noise_var`` is
    ``(B,)``. Instances whose projection breaks down or whose EACS becomes
    non-finite are flagged in ``diverged`` instead of raising.
    """
    if ProjectionMode(cfg.projection_mode) is not ProjectionMode.APPROXIMATE:
        raise ValueError("batched detection supports only the approximate projection")
    G = np.asarray(G, dtype=float)
    y = np.asarray(y, dtype=float)
    B, n, k2 = G.shape
    U = cfg.n_groups
    if n % U:
        raise ValueError(f"group count {U} does not divide 2*N_r = {n}")
    Gs = G.reshape(B, U, n // U, k2)
    ys = y.reshape(B, U, n // U)
    nv = np.broadcast_to(np.asarray(noise_var, dtype=float), (B,))[:, None]
    d = np.asarray(d, dtype=float)

    def project(th_u, idx):
        out, ok = approx_projection_stacked(ys[idx], Gs[idx], nv[idx], th_u, d, alphabet)
        return out, ok.all(axis=-1)

    theta0 = np.zeros((B,) + d.shape[-2:])
    theta_u = np.zeros((B, U) + d.shape[-2:])
    iters, converged, diverged, _, _ = _iterate(project, theta_u, theta0, cfg)
    marginals = theta_to_marginals(theta0, d)
    marginals[diverged] = np.nan
    return BatchOutcome(marginals, iters, converged, diverged)


def trace_csv(state: GigaState, tol: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "delta_sup", "converged"])
    for i, delta in enumerate(state.trace.deltas, start=1):
        w.writerow([i, repr(delta), int(delta < tol)])
    return buf.getvalue()
