"""Real-valued MIMO transmission model, QAM alphabets, priors and grouping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class Alphabet:
    """PAM levels used on each real component of a square QAM constellation."""

    points: np.ndarray

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def bits_per_level(self) -> int:
        return int(round(math.log2(self.size)))


@dataclass(frozen=True)
class ComplexSystem:
    channel: np.ndarray
    received: np.ndarray
    noise_var: float
    mod_order: int

    def __post_init__(self):
        channel = np.asarray(self.channel, dtype=complex)
        received = np.asarray(self.received, dtype=complex)
        if channel.ndim != 2 or channel.shape[0] < 1 or channel.shape[1] < 1:
            raise ValueError(f"channel must be a non-empty 2-D matrix, got shape {channel.shape}")
        if received.shape != (channel.shape[0],):
            raise ValueError(
                f"received has shape {received.shape}, expected ({channel.shape[0]},)"
            )
        if not self.noise_var > 0:
            raise ValueError(f"noise variance must be positive, got {self.noise_var}")
        _check_mod_order(self.mod_order)
        object.__setattr__(self, "channel", channel)
        object.__setattr__(self, "received", received)

    @property
    def n_rx(self) -> int:
        return self.channel.shape[0]

    @property
    def n_users(self) -> int:
        return self.channel.shape[1]


@dataclass(frozen=True)
class RealSystem:
    """Real lifted model ``y = G s + z`` with ``z ~ N(0, noise_var I)``.

    ``prior_nat`` holds the log prior ratios ``d`` with shape ``(2K, L-1)``.
    """

    G: np.ndarray
    y: np.ndarray
    noise_var: float
    alphabet: Alphabet
    prior_nat: np.ndarray

    @property
    def n_real_rx(self) -> int:
        return self.G.shape[0]

    @property
    def n_real_users(self) -> int:
        return self.G.shape[1]


@dataclass(frozen=True)
class Grouping:
    n_groups: int
    group_size: int
    index_sets: tuple[range, ...]
    sub_received: np.ndarray  # (U, N_u)
    sub_channels: np.ndarray  # (U, N_u, 2K)


def _check_mod_order(mod_order: int) -> int:
    if int(mod_order) != mod_order or mod_order < 4:
        raise ValueError(f"modulation order must be an integer >= 4, got {mod_order}")
    side = math.isqrt(int(mod_order))
    if side * side != mod_order:
        raise ValueError(f"modulation order {mod_order} is not a perfect square")
    if side & (side - 1):
        raise ValueError(f"modulation order {mod_order} does not carry an integer bit count per axis")
    return side


def make_alphabet(mod_order: int) -> Alphabet:
    """Return the ``sqrt(mod_order)`` odd-spaced levels with mean square 1/2.

    >>> make_alphabet(16).points * np.sqrt(10)
    array([-3., -1.,  1.,  3.])
    """
    side = _check_mod_order(mod_order)
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    # mean of (2i - L + 1)^2 over i is (L^2 - 1)/3
    scale = math.sqrt(1.5 / (side * side - 1))
    points = levels * scale
    points.setflags(write=False)
    return Alphabet(points)


def _check_priors(priors: np.ndarray) -> np.ndarray:
    priors = np.atleast_2d(np.asarray(priors, dtype=float))
    if priors.ndim != 2:
        raise ValueError(f"priors must be 2-D, got shape {priors.shape}")
    if not np.all(np.isfinite(priors)) or np.any(priors <= 0):
        raise ValueError("prior probabilities must be finite and strictly positive")
    if not np.allclose(priors.sum(axis=1), 1.0, rtol=0, atol=1e-9):
        raise ValueError("each prior row must sum to 1")
    return priors


def prior_natural_params(priors) -> np.ndarray:
    """Log prior ratios ``d[k, l-1] = ln(p_k(s_l) / p_k(s_0))`` for ``l >= 1``."""
    priors = _check_priors(priors)
    logp = np.log(np.maximum(priors, PROB_FLOOR))
    return logp[:, 1:] - logp[:, :1]


def uniform_priors(n_users: int, mod_order: int) -> np.ndarray:
    """Uniform per-user priors over the real-axis levels, shape ``(K, L)``."""
    side = _check_mod_order(mod_order)
    return np.full((n_users, side), 1.0 / side)


def lift_channel(channel: np.ndarray) -> np.ndarray:
    channel = np.asarray(channel, dtype=complex)
    re, im = channel.real, channel.imag
    return np.block([[re, -im], [im, re]])


def lift_vector(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=complex)
    return np.concatenate([vec.real, vec.imag], axis=-1)


def lift_to_real(sys: ComplexSystem, priors=None) -> RealSystem:
    """Build the real counterpart of a complex uplink model.

    ``priors`` has one row per user over the ``L`` real-axis levels; the same
    row is used for the real and the imaginary component of that user. ``None``
    means uniform.
    """
    alphabet = make_alphabet(sys.mod_order)
    if priors is None:
        priors = uniform_priors(sys.n_users, sys.mod_order)
    priors = _check_priors(priors)
    if priors.shape != (sys.n_users, alphabet.size):
        raise ValueError(
            f"priors must have shape ({sys.n_users}, {alphabet.size}), got {priors.shape}"
        )
    d = prior_natural_params(np.vstack([priors, priors]))
    return RealSystem(
        G=lift_channel(sys.channel),
        y=lift_vector(sys.received),
        noise_var=sys.noise_var / 2.0,
        alphabet=alphabet,
        prior_nat=d,
    )


def make_grouping(real_sys: RealSystem, n_groups: int) -> Grouping:
    """Split the real received vector into ``n_groups`` contiguous equal blocks."""
    n = real_sys.n_real_rx
    if int(n_groups) != n_groups or n_groups < 1:
        raise ValueError(f"group count must be a positive integer, got {n_groups}")
    if n % n_groups:
        raise ValueError(f"group count {n_groups} does not divide 2*N_r = {n}")
    size = n // n_groups
    index_sets = tuple(range(u * size, (u + 1) * size) for u in range(n_groups))
    return Grouping(
        n_groups=n_groups,
        group_size=size,
        index_sets=index_sets,
        sub_received=real_sys.y.reshape(n_groups, size),
        sub_channels=real_sys.G.reshape(n_groups, size, real_sys.n_real_users),
    )


# --- channel import --------------------------------------------------------


class ChannelFileError(ValueError):
    pass


def read_channel_file(path) -> np.ndarray:
    """Parse a channel export.

    Format: a header ``nr=<N_r> k=<K>`` then ``N_r*K`` lines ``row col re im``
    with zero-based indices in row-major order. Blank lines and ``#`` comments
    are ignored.
    """
    lines = [
        (no, ln.strip())
        for no, ln in enumerate(Path(path).read_text().splitlines(), start=1)
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not lines:
        raise ChannelFileError(f"{path}: empty channel file")
    no, header = lines[0]
    fields = dict(tok.split("=", 1) for tok in header.split() if "=" in tok)
    if set(fields) != {"nr", "k"} or len(header.split()) != 2:
        raise ChannelFileError(f"{path}:{no}: expected header 'nr=<N_r> k=<K>', got {header!r}")
    try:
        nr, k = int(fields["nr"]), int(fields["k"])
    except ValueError:
        raise ChannelFileError(f"{path}:{no}: non-integer dimensions in {header!r}") from None
    if nr < 1 or k < 1:
        raise ChannelFileError(f"{path}:{no}: dimensions must be positive")

    channel = np.empty((nr, k), dtype=complex)
    seen = np.zeros((nr, k), dtype=bool)
    body = lines[1:]
    for i, (no, ln) in enumerate(body):
        parts = ln.split()
        if len(parts) != 4:
            raise ChannelFileError(f"{path}:{no}: expected 'row col re im', got {ln!r}")
        try:
            r, c = int(parts[0]), int(parts[1])
            re, im = float(parts[2]), float(parts[3])
        except ValueError:
            raise ChannelFileError(f"{path}:{no}: malformed entry {ln!r}") from None
        if not (0 <= r < nr and 0 <= c < k):
            raise ChannelFileError(f"{path}:{no}: index ({r}, {c}) outside {nr}x{k}")
        if seen[r, c]:
            raise ChannelFileError(f"{path}:{no}: duplicate entry ({r}, {c})")
        if i >= nr * k or (r, c) != divmod(i, k):
            raise ChannelFileError(
                f"{path}:{no}: entry ({r}, {c}) out of row-major order, expected {divmod(i, k)}"
            )
        if not (math.isfinite(re) and math.isfinite(im)):
            raise ChannelFileError(f"{path}:{no}: non-finite value")
        channel[r, c] = complex(re, im)
        seen[r, c] = True
    if not seen.all():
        r, c = np.argwhere(~seen)[0]
        raise ChannelFileError(f"{path}: missing entry ({r}, {c}); {int((~seen).sum())} absent")
    return channel


def write_channel_file(path, channel: np.ndarray) -> None:
    channel = np.asarray(channel, dtype=complex)
    nr, k = channel.shape
    rows = [f"nr={nr} k={k}"]
    for r in range(nr):
        for c in range(k):
            z = channel[r, c]
            rows.append(f"{r} {c} {float(z.real)!r} {float(z.imag)!r}")
    Path(path).write_text("\n".join(rows) + "\n")
