import json
import logging

import numpy as np
import pytest

import giga.sim as sim_mod
from giga.detector import BatchOutcome
from giga.sim import (
    CSV_HEADER,
    SimConfig,
    bit_errors,
    complexity_table,
    draw_realization,
    gen_channel_iid,
    gray_code,
    noise_var_from_snr,
    run_trial,
    sweep,
    trial_rng,
)
from giga.system import make_alphabet, write_channel_file


class TestChannel:
    def test_column_energy(self):
        H = gen_channel_iid(64, 1000, np.random.default_rng(3))
        assert 0.9 < np.mean(np.sum(np.abs(H) ** 2, axis=0)) < 1.1
        for part in (H.real, H.imag):
            assert abs(part.var() / (1 / 128) - 1) < 0.1

    def test_seeded(self):
        a = gen_channel_iid(4, 3, trial_rng(9, 5, "channel"))
        b = gen_channel_iid(4, 3, trial_rng(9, 5, "channel"))
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != gen_channel_iid(4, 3, trial_rng(9, 6, "channel")).tobytes()


class TestSnr:
    def test_values(self):
        assert noise_var_from_snr(10, 240) == pytest.approx(24, rel=1e-15)
        assert noise_var_from_snr(0, 1) == 1.0
        assert noise_var_from_snr(3.0103, 2) == pytest.approx(1.0, abs=1e-5)


class TestBits:
    def test_gray_adjacent_differ_by_one_bit(self):
        codes = gray_code(np.arange(16))
        assert len(set(codes.tolist())) == 16
        assert all(bin(int(x) ^ int(y)).count("1") == 1 for x, y in zip(codes[:-1], codes[1:]))

    def test_bit_errors(self):
        tx = np.array([[0, 1, 2, 3]])
        rx = np.array([[0, 2, 2, 0]])
        # gray: 0->00 1->01 2->11 3->10
        assert bit_errors(tx, rx).tolist() == [2]


def small(**kw):
    base = dict(n_rx=4, n_users=2, mod_order=4, group_counts=(1, 4), snr_db=(0.0, 12.0), trials=24, seed=5,
                chunk_size=5, detectors=("giga", "lmmse", "exact-oracle"))
    base.update(kw)
    return SimConfig(**base)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(trials=0), dict(snr_db=()), dict(detectors=("zf",)), dict(group_counts=(3,)), dict(mod_order=8),
         dict(channel="file"), dict(seed=-1), dict(damping=0.0), dict(n_users=12), dict(workers=0)],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            small(**kw)

    def test_json_round_trip(self, tmp_path):
        cfg = small()
        path = tmp_path / "c.json"
        path.write_text(cfg.to_json())
        assert SimConfig.from_file(path) == cfg
        assert SimConfig.from_file(path, trials=7).trials == 7
        with pytest.raises(ValueError):
            SimConfig.from_mapping(dict(json.loads(cfg.to_json()), bogus=1))

    def test_series(self):
        assert small().series() == [("giga", 1), ("giga", 4), ("lmmse", 0), ("exact-oracle", 0)]


class TestSweep:
    def test_bit_accounting(self):
        rep = sweep(small())
        for r in rep.rows:
            assert r.bits == (r.trials - r.flagged) * 2 * 2 * 1
            assert r.trials == 24
        assert rep.to_csv().splitlines()[0] == ",".join(CSV_HEADER)

    def test_chunking_and_workers_do_not_change_results(self):
        a = sweep(small()).to_csv()
        assert sweep(small(chunk_size=1)).to_csv() == a
        assert sweep(small(workers=3)).to_csv() == a

    def test_exact_single_group_matches_oracle(self):
        cfg = small(group_counts=(1,), damping=1.0, max_iters=1, projection_mode="exact-oracle")
        rep = sweep(cfg)
        for snr in cfg.snr_db:
            assert rep.row("giga", 1, snr).errors == rep.row("exact-oracle", 0, snr).errors
        # the trial-level decisions agree as well
        for t in range(3):
            out = run_trial(cfg, t)
            for snr in cfg.snr_db:
                assert out[("giga", 1, snr)].errors == out[("exact-oracle", 0, snr)].errors

    def test_noiseless_is_error_free(self):
        rep = sweep(small(snr_db=(120.0,), trials=10))
        assert all(r.errors == 0 for r in rep.rows)

    def test_detectors_share_realizations(self):
        cfg = small()
        a = make_alphabet(4)
        H1, tx1, n1 = draw_realization(cfg, 3, a)
        H2, tx2, n2 = draw_realization(small(detectors=("lmmse",)), 3, a)
        assert H1.tobytes() == H2.tobytes() and tx1.tobytes() == tx2.tobytes() and n1.tobytes() == n2.tobytes()

    def test_trend(self):
        rep = sweep(SimConfig(8, 2, 4, (4,), (2.0, 12.0), trials=2500, seed=1, chunk_size=500))
        for det, U in rep.config.series():
            assert rep.row(det, U, 12.0).ber < rep.row(det, U, 2.0).ber
            assert rep.row(det, U, 2.0).bits >= 10_000

    def test_plot_tsv(self):
        rep = sweep(small())
        lines = rep.to_plot_tsv().splitlines()
        assert lines[0].split("\t") == ["snr_db", "giga_U1", "giga_U4", "lmmse", "exact-oracle"]
        assert [ln.split("\t")[0] for ln in lines[1:]] == ["0", "12"]

    def test_flagged_trials_are_excluded(self, monkeypatch, caplog):
        real = sim_mod.run_giga_batch

        def flag_first(*args, **kwargs):
            out = real(*args, **kwargs)
            div = out.diverged.copy()
            div[0] = True
            marg = out.marginals.copy()
            marg[0] = np.nan
            return BatchOutcome(marg, out.iterations, out.converged & ~div, div)

        monkeypatch.setattr(sim_mod, "run_giga_batch", flag_first)
        with caplog.at_level(logging.WARNING):
            rep = sweep(small(detectors=("giga",), group_counts=(2,), chunk_size=8))
        row = rep.row("giga", 2, 0.0)
        assert row.flagged == 3 and row.bits == (24 - 3) * 4
        assert "diverged" in caplog.text

    def test_timing_off_by_default(self):
        rep = sweep(small(trials=3))
        assert all(r.wall_ms == 0.0 for r in rep.rows)
        assert all(r.wall_ms > 0.0 for r in sweep(small(trials=3, record_timing=True)).rows)

    def test_file_channel(self, tmp_path, rng):
        H = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        write_channel_file(tmp_path / "h.txt", H)
        cfg = small(channel="file", channel_file=str(tmp_path / "h.txt"), normalize_columns=True)
        a = make_alphabet(4)
        Hf, _, _ = draw_realization(cfg, 0, a, sim_mod._load_channel(cfg))
        np.testing.assert_allclose(np.linalg.norm(Hf, axis=0), 1.0)
        assert sweep(cfg).rows
        with pytest.raises(ValueError):
            sweep(small(n_rx=2, group_counts=(1,), channel="file", channel_file=str(tmp_path / "h.txt")))


class TestComplexity:
    def test_row_values(self):
        row = complexity_table(240, 1024, 2, [16])[0]
        assert (row.group_size, row.P, row.Q) == (128, 9_961_472, 177_438_720)
        assert row.C_U == 16 * 9_961_472 + 24 * 240 * 1024**2 // 16 + 4 * 240 * 16 * 2

    def test_rejects_non_divisor(self):
        with pytest.raises(ValueError):
            complexity_table(2, 4, 2, [3])
