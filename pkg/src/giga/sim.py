"""Monte Carlo BER harness and per-iteration complexity model.

Randomness comes from Philox counter-based generators keyed by
``(seed, trial, purpose)`` through :class:`numpy.random.SeedSequence`, so a
trial's channel, symbols and noise do not depend on how trials are scheduled.
The same per-trial draws are reused at every SNR point; only the noise scale
changes.

Trials are processed in fixed-size chunks. The chunking depends only on the
configuration, never on the worker count, and chunk results are merged in
trial order, so reports are identical for any number of workers.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detector import GigaConfig, ProjectionMode, mpm_indices, run_giga, run_giga_batch
from .geometry import ENUMERATION_CAP, exact_posterior
from .lmmse import lmmse_soft_batch, nearest_indices
from .projection import estimate_complexity
from .system import Alphabet, RealSystem, make_alphabet, read_channel_file

log = logging.getLogger(__name__)

DETECTORS = ("giga", "lmmse", "exact-oracle")
CHANNEL_SOURCES = ("iid-gaussian", "file")
CSV_HEADER = ["detector", "U", "snr_db", "bits", "errors", "ber", "mean_iters", "wall_ms"]

_PURPOSE = {"channel": 0, "symbols": 1, "noise": 2}


def trial_rng(seed: int, trial: int, purpose: str) -> np.random.Generator:
    """Independent Philox stream for one ``(seed, trial, purpose)`` triple."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, trial, _PURPOSE[purpose]])
    return np.random.Generator(np.random.Philox(ss))


def gen_channel_iid(n_rx: int, n_users: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. ``CN(0, 1/n_rx)`` entries, so each column has unit expected energy."""
    if n_rx < 1 or n_users < 1:
        raise ValueError("channel dimensions must be positive")
    scale = np.sqrt(0.5 / n_rx)
    return scale * (rng.standard_normal((n_rx, n_users)) + 1j * rng.standard_normal((n_rx, n_users)))


def noise_var_from_snr(snr_db: float, n_users: int) -> float:
    """Complex noise variance for ``SNR = K / noise_var``."""
    if n_users < 1:
        raise ValueError("n_users must be positive")
    return n_users / 10.0 ** (snr_db / 10.0)


def gray_code(indices) -> np.ndarray:
    idx = np.asarray(indices)
    return idx ^ (idx >> 1)


def bit_errors(tx_idx, rx_idx) -> np.ndarray:
    """Bit errors per row under Gray labelling of the level indices."""
    diff = gray_code(tx_idx) ^ gray_code(rx_idx)
    bits = np.unpackbits(diff.astype(np.uint8)[..., None], axis=-1)
    return bits.reshape(diff.shape[:-1] + (-1,)).sum(axis=-1, dtype=np.int64)


@dataclass(frozen=True)
class SimConfig:
    n_rx: int
    n_users: int
    mod_order: int = 4
    group_counts: tuple[int, ...] = (1,)
    snr_db: tuple[float, ...] = (10.0,)
    trials: int = 100
    seed: int = 0
    damping: float = 0.3
    max_iters: int = 50
    tol: float = 1e-6
    detectors: tuple[str, ...] = ("giga", "lmmse")
    channel: str = "iid-gaussian"
    channel_file: str | None = None
    normalize_columns: bool = False
    projection_mode: str = "approximate"
    workers: int = 1
    chunk_size: int = 256
    record_timing: bool = False
    enumeration_cap: int = ENUMERATION_CAP

    def __post_init__(self):
        object.__setattr__(self, "group_counts", tuple(int(u) for u in self.group_counts))
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "detectors", tuple(self.detectors))
        self.validate()

    def validate(self) -> None:
        if self.n_rx < 1 or self.n_users < 1:
            raise ValueError("n_rx and n_users must be positive")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.snr_db:
            raise ValueError("empty SNR grid")
        if self.chunk_size < 1 or self.workers < 1:
            raise ValueError("chunk_size and workers must be positive")
        alphabet = make_alphabet(self.mod_order)
        unknown = set(self.detectors) - set(DETECTORS)
        if unknown or not self.detectors:
            raise ValueError(f"unknown detectors {sorted(unknown)}; choose from {DETECTORS}")
        if self.channel not in CHANNEL_SOURCES:
            raise ValueError(f"channel source must be one of {CHANNEL_SOURCES}")
        if self.channel == "file" and not self.channel_file:
            raise ValueError("channel source 'file' needs channel_file")
        if "giga" in self.detectors:
            if not self.group_counts:
                raise ValueError("giga needs at least one group count")
            for u in self.group_counts:
                if u < 1 or (2 * self.n_rx) % u:
                    raise ValueError(f"group count {u} does not divide 2*N_r = {2 * self.n_rx}")
            GigaConfig(self.group_counts[0], self.damping, self.max_iters, self.tol, self.projection_mode)
        states = alphabet.size ** (2 * self.n_users)
        needs_enum = "exact-oracle" in self.detectors or (
            "giga" in self.detectors and ProjectionMode(self.projection_mode) is ProjectionMode.EXACT
        )
        if needs_enum and states > self.enumeration_cap:
            raise ValueError(
                f"exhaustive enumeration over {states} states exceeds cap {self.enumeration_cap}"
            )

    @classmethod
    def from_mapping(cls, data: dict) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path, **overrides) -> "SimConfig":
        data = json.loads(Path(path).read_text())
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(data)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    def series(self) -> list[tuple[str, int]]:
        """``(detector, U)`` pairs in report order; ``U = 0`` for ungrouped detectors."""
        out = []
        for det in DETECTORS:
            if det not in self.detectors:
                continue
            if det == "giga":
                out.extend((det, u) for u in self.group_counts)
            else:
                out.append((det, 0))
        return out


@dataclass
class Tally:
    errors: int = 0
    bits: int = 0
    trials: int = 0
    flagged: int = 0
    converged: int = 0
    iterations: int = 0
    wall_s: float = 0.0

    def merge(self, other: "Tally") -> None:
        self.errors += other.errors
        self.bits += other.bits
        self.trials += other.trials
        self.flagged += other.flagged
        self.converged += other.converged
        self.iterations += other.iterations
        self.wall_s += other.wall_s


@dataclass
class BerRow:
    detector: str
    U: int
    snr_db: float
    bits: int
    errors: int
    trials: int
    flagged: int
    converged: int
    mean_iters: float
    wall_ms: float

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else float("nan")


@dataclass
class BerReport:
    config: SimConfig
    rows: list[BerRow] = field(default_factory=list)

    def row(self, detector: str, U: int, snr_db: float) -> BerRow:
        for r in self.rows:
            if r.detector == detector and r.U == U and r.snr_db == float(snr_db):
                return r
        raise KeyError((detector, U, snr_db))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([
                r.detector, r.U, f"{r.snr_db:g}", r.bits, r.errors,
                f"{r.ber:.6e}", f"{r.mean_iters:.4f}", f"{r.wall_ms:.3f}",
            ])
        return buf.getvalue()

    def to_plot_tsv(self) -> str:
        series = self.config.series()
        names = [det if det != "giga" else f"giga_U{u}" for det, u in series]
        lines = ["\t".join(["snr_db"] + names)]
        for snr in self.config.snr_db:
            vals = [f"{self.row(det, u, snr).ber:.6e}" for det, u in series]
            lines.append("\t".join([f"{snr:g}"] + vals))
        return "\n".join(lines) + "\n"


# --- trial machinery ----------------------------------------------------------


def _load_channel(sim: SimConfig) -> np.ndarray:
    H = read_channel_file(sim.channel_file)
    if H.shape != (sim.n_rx, sim.n_users):
        raise ValueError(f"channel file is {H.shape[0]}x{H.shape[1]}, config expects {sim.n_rx}x{sim.n_users}")
    if sim.normalize_columns:
        H = H / np.linalg.norm(H, axis=0, keepdims=True)
    return H


def draw_realization(sim: SimConfig, trial: int, alphabet: Alphabet, fixed_channel=None):
    """Channel, transmitted level indices ``(2K,)`` and unit complex noise for a trial."""
    if fixed_channel is None:
        H = gen_channel_iid(sim.n_rx, sim.n_users, trial_rng(sim.seed, trial, "channel"))
    else:
        H = fixed_channel
    tx = trial_rng(sim.seed, trial, "symbols").integers(0, alphabet.size, size=2 * sim.n_users)
    rng = trial_rng(sim.seed, trial, "noise")
    noise = np.sqrt(0.5) * (rng.standard_normal(sim.n_rx) + 1j * rng.standard_normal(sim.n_rx))
    return H, tx, noise


def _lift_batch(H, s_idx, noise, alphabet: Alphabet, sigma2_c: float):
    re, im = H.real, H.imag
    G = np.concatenate([np.concatenate([re, -im], axis=2), np.concatenate([im, re], axis=2)], axis=1)
    s = alphabet.points[s_idx]
    z = np.sqrt(sigma2_c) * np.concatenate([noise.real, noise.imag], axis=1)
    y = np.einsum("bnm,bm->bn", G, s) + z
    return G, y


def _run_chunk(sim: SimConfig, trials: range) -> dict:
    """Tallies keyed by ``(detector, U, snr_db)`` for a contiguous block of trials."""
    alphabet = make_alphabet(sim.mod_order)
    fixed = _load_channel(sim) if sim.channel == "file" else None
    draws = [draw_realization(sim, t, alphabet, fixed) for t in trials]
    H = np.stack([d[0] for d in draws])
    tx = np.stack([d[1] for d in draws])
    noise = np.stack([d[2] for d in draws])
    B = len(draws)
    k2 = 2 * sim.n_users
    bits_per_trial = k2 * alphabet.bits_per_level
    d = np.zeros((k2, alphabet.size - 1))
    mode = ProjectionMode(sim.projection_mode)

    out: dict[tuple[str, int, float], Tally] = {}
    for snr in sim.snr_db:
        sigma2_c = noise_var_from_snr(snr, sim.n_users)
        G, y = _lift_batch(H, tx, noise, alphabet, sigma2_c)
        nv = np.full(B, sigma2_c / 2)
        for det, U in sim.series():
            t0 = time.perf_counter()
            iters = np.zeros(B, dtype=int)
            conv = np.zeros(B, dtype=bool)
            flagged = np.zeros(B, dtype=bool)
            if det == "lmmse":
                rx = nearest_indices(lmmse_soft_batch(G, y, nv), alphabet)
            elif det == "exact-oracle":
                rx = np.stack([
                    mpm_indices(exact_posterior(RealSystem(G[b], y[b], nv[b], alphabet, d), sim.enumeration_cap).marginals)
                    for b in range(B)
                ])
            else:
                cfg = GigaConfig(U, sim.damping, sim.max_iters, sim.tol, mode)
                if mode is ProjectionMode.APPROXIMATE:
                    res = run_giga_batch(G, y, nv, alphabet, d, cfg)
                    iters, conv, flagged = res.iterations, res.converged, res.diverged
                    rx = mpm_indices(np.nan_to_num(res.marginals))
                else:
                    rx = np.zeros_like(tx)
                    for b in range(B):
                        try:
                            r, _ = run_giga(RealSystem(G[b], y[b], nv[b], alphabet, d), cfg)
                        except ArithmeticError:
                            flagged[b] = True
                            continue
                        rx[b], iters[b], conv[b] = mpm_indices(r.marginals), r.iterations_used, r.converged
            errs = bit_errors(tx, rx)
            keep = ~flagged
            out[(det, U, snr)] = Tally(
                errors=int(errs[keep].sum()),
                bits=int(keep.sum()) * bits_per_trial,
                trials=B,
                flagged=int(flagged.sum()),
                converged=int(conv[keep].sum()),
                iterations=int(iters[keep].sum()),
                wall_s=time.perf_counter() - t0,
            )
    return out


def run_trial(sim: SimConfig, trial_index: int) -> dict:
    """Bit-error tallies of every configured detector on one realization.

    All detectors and SNR points see the same channel, symbols and noise draw.
    """
    return _run_chunk(sim, range(trial_index, trial_index + 1))


def _chunks(sim: SimConfig) -> list[range]:
    return [range(a, min(a + sim.chunk_size, sim.trials)) for a in range(0, sim.trials, sim.chunk_size)]


def sweep(sim: SimConfig) -> BerReport:
    sim.validate()
    chunks = _chunks(sim)
    if sim.workers == 1 or len(chunks) == 1:
        results = [_run_chunk(sim, c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=sim.workers) as pool:
            results = list(pool.map(_run_chunk, [sim] * len(chunks), chunks))

    report = BerReport(sim)
    for snr in sim.snr_db:
        for det, U in sim.series():
            tally = Tally()
            for res in results:
                tally.merge(res[(det, U, snr)])
            kept = tally.trials - tally.flagged
            if tally.flagged:
                log.warning("%s U=%d snr=%g dB: %d diverged trials excluded from BER", det, U, snr, tally.flagged)
            report.rows.append(BerRow(
                detector=det, U=U, snr_db=snr, bits=tally.bits, errors=tally.errors,
                trials=tally.trials, flagged=tally.flagged, converged=tally.converged,
                mean_iters=tally.iterations / kept if kept else float("nan"),
                wall_ms=1e3 * tally.wall_s if sim.record_timing else 0.0,
            ))
    return report


# --- complexity model -----------------------------------------------------------


@dataclass(frozen=True)
class ComplexityRow:
    U: int
    group_size: int
    P: int
    Q: int
    C_U: int


def complexity_table(n_users: int, n_rx: int, levels: int, group_counts) -> list[ComplexityRow]:
    """Exact integer per-iteration multiplication counts for each group count.

    ``C_U = U min(P, Q) + 24 K N_r^2 / U + 4 K U L``; the middle term equals
    ``12 K N_r N_u`` and is evaluated that way to stay in integers.
    """
    rows = []
    for U in group_counts:
        U = int(U)
        if U < 1 or (2 * n_rx) % U:
            raise ValueError(f"group count {U} does not divide 2*N_r = {2 * n_rx}")
        N_u = 2 * n_rx // U
        est = estimate_complexity(n_users, N_u)
        c = U * min(est.P, est.Q) + 12 * n_users * n_rx * N_u + 4 * n_users * U * levels
        rows.append(ComplexityRow(U, N_u, est.P, est.Q, c))
    return rows
