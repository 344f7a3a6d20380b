"""Command-line entry point: ``giga {sweep,trace,complexity,oracle-check,import-channel}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import oracle
from .detector import GigaConfig, run_giga, trace_csv
from .sim import (
    CHANNEL_SOURCES,
    DETECTORS,
    SimConfig,
    complexity_table,
    draw_realization,
    noise_var_from_snr,
    sweep,
)
from .system import ComplexSystem, lift_to_real, make_alphabet, read_channel_file


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with SimConfig fields")
    p.add_argument("--nr", dest="n_rx", type=int, help="BS antennas N_r")
    p.add_argument("--k", dest="n_users", type=int, help="users K")
    p.add_argument("--mod-order", dest="mod_order", type=int, help="QAM order (4, 16, 64, ...)")
    p.add_argument("--groups", dest="group_counts", type=_ints, help="group counts U, e.g. '16,32'")
    p.add_argument("--damping", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--projection", dest="projection_mode", choices=["approximate", "exact-oracle"])
    p.add_argument("--channel", choices=CHANNEL_SOURCES)
    p.add_argument("--channel-file", dest="channel_file")
    p.add_argument("--normalize-columns", dest="normalize_columns", action="store_true", default=None)


def _sim_config(args, **extra) -> SimConfig:
    keys = [
        "n_rx", "n_users", "mod_order", "group_counts", "damping", "max_iters", "tol",
        "projection_mode", "channel", "channel_file", "normalize_columns",
    ]
    overrides = {k: getattr(args, k, None) for k in keys}
    overrides.update(extra)
    if args.config is not None:
        return SimConfig.from_file(args.config, **overrides)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    missing = {"n_rx", "n_users"} - set(overrides)
    if missing:
        raise SystemExit(f"error: --nr and --k are required without --config (missing {sorted(missing)})")
    return SimConfig.from_mapping(overrides)


def _write(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def cmd_sweep(args) -> int:
    sim = _sim_config(
        args,
        seed=args.seed,
        snr_db=args.snr,
        trials=args.trials,
        detectors=args.detectors,
        workers=args.workers,
        chunk_size=args.chunk_size,
        record_timing=args.timing or None,
    )
    report = sweep(sim)
    _write(report.to_csv(), args.out)
    if args.plot_data is not None:
        args.plot_data.write_text(report.to_plot_tsv())
    flagged = sum(r.flagged for r in report.rows)
    if flagged:
        print(f"warning: {flagged} diverged detector runs excluded from BER", file=sys.stderr)
    return 0


def cmd_trace(args) -> int:
    sim = _sim_config(args, seed=args.seed, snr_db=[args.snr], trials=1)
    alphabet = make_alphabet(sim.mod_order)
    fixed = read_channel_file(sim.channel_file) if sim.channel == "file" else None
    if fixed is not None and sim.normalize_columns:
        fixed = fixed / np.linalg.norm(fixed, axis=0, keepdims=True)
    H, tx, noise = draw_realization(sim, args.trial, alphabet, fixed)
    sigma2 = noise_var_from_snr(args.snr, sim.n_users)
    s = alphabet.points[tx]
    s_c = s[: sim.n_users] + 1j * s[sim.n_users:]
    y = H @ s_c + np.sqrt(sigma2) * noise
    real_sys = lift_to_real(ComplexSystem(H, y, sigma2, sim.mod_order))
    U = sim.group_counts[0]
    cfg = GigaConfig(U, sim.damping, sim.max_iters, sim.tol, sim.projection_mode)
    result, state = run_giga(real_sys, cfg)
    _write(trace_csv(state, cfg.tol), args.out)
    errors = int(np.sum(result.real_decisions != s))
    print(
        f"# U={U} iterations={result.iterations_used} converged={result.converged} "
        f"symbol_component_errors={errors}",
        file=sys.stderr,
    )
    return 0


def cmd_complexity(args) -> int:
    levels = args.levels if args.levels is not None else make_alphabet(args.mod_order).size
    counts = args.groups
    if counts is None:
        counts = [u for u in range(1, 2 * args.n_rx + 1) if (2 * args.n_rx) % u == 0]
    rows = complexity_table(args.n_users, args.n_rx, levels, counts)
    lines = ["U,N_u,P,Q,path,C_U"]
    for r in rows:
        path = "direct-inverse" if r.P <= r.Q else "woodbury"
        lines.append(f"{r.U},{r.group_size},{r.P},{r.Q},{path},{r.C_U}")
    _write("\n".join(lines) + "\n", args.out)
    return 0


def cmd_oracle_check(args) -> int:
    results = oracle.run_all(seed=args.seed, scale=args.scale)
    failed = 0
    for res in results:
        print(res.line())
        failed += not res.passed
    return 1 if failed else 0


def cmd_import_channel(args) -> int:
    H = read_channel_file(args.path)
    if args.normalize_columns:
        H = H / np.linalg.norm(H, axis=0, keepdims=True)
    norms = np.linalg.norm(H, axis=0)
    print(f"nr={H.shape[0]} k={H.shape[1]}")
    print(f"column norms: min={norms.min():.6g} mean={norms.mean():.6g} max={norms.max():.6g}")
    print(f"condition number: {np.linalg.cond(H):.6g}")
    if args.out is not None:
        np.save(args.out, H)
        print(f"saved {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="giga", description="GIGA MIMO detection toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="BER over an SNR grid")
    _add_sim_flags(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--snr", type=_floats, help="SNR grid in dB, e.g. '4,8,12'")
    p.add_argument("--trials", type=int)
    p.add_argument("--detectors", type=lambda s: s.replace(",", " ").split(),
                   help=f"subset of {','.join(DETECTORS)}")
    p.add_argument("--workers", type=int)
    p.add_argument("--chunk-size", dest="chunk_size", type=int)
    p.add_argument("--timing", action="store_true", help="fill wall_ms (makes output non-reproducible)")
    p.add_argument("--out", type=Path, help="CSV path (default stdout)")
    p.add_argument("--plot-data", dest="plot_data", type=Path, help="TSV of snr_db vs BER per series")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("trace", help="per-iteration convergence trace of one instance")
    _add_sim_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--snr", type=float, default=8.0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("complexity", help="per-iteration multiplication counts versus U")
    p.add_argument("--k", dest="n_users", type=int, required=True)
    p.add_argument("--nr", dest="n_rx", type=int, required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--levels", type=int, help="levels per real axis L")
    g.add_argument("--mod-order", dest="mod_order", type=int)
    p.add_argument("--groups", type=_ints, help="group counts (default: every divisor of 2*N_r)")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("oracle-check", help="small-instance equivalence suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="multiplier on instance counts")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("import-channel", help="validate a channel export")
    p.add_argument("path", type=Path)
    p.add_argument("--normalize-columns", action="store_true")
    p.add_argument("--out", type=Path, help="save the parsed matrix as .npy")
    p.set_defaults(func=cmd_import_channel)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
