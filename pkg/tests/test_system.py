import math

import numpy as np
import pytest

from giga.system import (
    ChannelFileError,
    ComplexSystem,
    RealSystem,
    lift_channel,
    lift_to_real,
    lift_vector,
    make_alphabet,
    make_grouping,
    prior_natural_params,
    read_channel_file,
    uniform_priors,
    write_channel_file,
)


class TestAlphabet:
    def test_qpsk_levels(self):
        # 4-QAM points (+-1 +- j)/sqrt(2)
        np.testing.assert_allclose(make_alphabet(4).points, [-1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-15)

    def test_16qam_levels(self):
        np.testing.assert_allclose(make_alphabet(16).points, np.array([-3, -1, 1, 3]) / math.sqrt(10), atol=1e-15)

    @pytest.mark.parametrize("order", [4, 16, 64, 256, 1024])
    def test_half_power_and_symmetry(self, order):
        pts = make_alphabet(order).points
        assert abs(np.mean(pts**2) - 0.5) < 1e-15
        assert np.all(pts + pts[::-1] == 0)
        assert np.all(np.diff(pts) > 0)
        # complex constellation has unit average energy
        grid = pts[:, None] + 1j * pts[None, :]
        assert abs(np.mean(np.abs(grid) ** 2) - 1.0) < 1e-14

    @pytest.mark.parametrize("order", [0, 2, 3, 8, 9, 32, 36, 4.5])
    def test_invalid_orders(self, order):
        with pytest.raises(ValueError):
            make_alphabet(order)

    def test_bits(self):
        assert make_alphabet(64).bits_per_level == 3


class TestPriors:
    def test_uniform_is_zero(self):
        np.testing.assert_array_equal(prior_natural_params(uniform_priors(3, 16)), 0.0)

    def test_log_ratio_row(self):
        d = prior_natural_params([[0.5, 0.25, 0.125, 0.125]])
        np.testing.assert_allclose(d, [[-0.693147, -1.386294, -1.386294]], atol=1e-6)

    def test_round_trip(self, rng):
        p = rng.dirichlet(np.ones(8), size=5)
        d = prior_natural_params(p)
        logits = np.concatenate([np.zeros((5, 1)), d], axis=1)
        back = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(back, p, atol=1e-12)

    @pytest.mark.parametrize("bad", [[[0.5, 0.6]], [[1.0, 0.0]], [[np.nan, 1.0]], [[-0.1, 1.1]]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            prior_natural_params(bad)


class TestLifting:
    def test_identity_block(self):
        real = lift_to_real(ComplexSystem([[1 + 0j]], [2 + 3j], 2.0, 4))
        np.testing.assert_array_equal(real.G, [[1, 0], [0, 1]])
        np.testing.assert_array_equal(real.y, [2, 3])
        assert real.noise_var == 1.0

    def test_pure_imaginary_block(self):
        np.testing.assert_array_equal(lift_channel([[1j]]), [[0, -1], [1, 0]])

    def test_matches_complex_product(self, rng):
        H = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        G = lift_channel(H)
        worst = 0.0
        for _ in range(20):
            s = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            worst = max(worst, np.abs(G @ lift_vector(s) - lift_vector(H @ s)).max())
        assert worst < 1e-12

    def test_priors_shared_by_real_and_imag(self):
        p = np.array([[0.7, 0.3], [0.4, 0.6]])
        real = lift_to_real(ComplexSystem(np.eye(2), np.zeros(2), 1.0, 4), priors=p)
        np.testing.assert_allclose(real.prior_nat, np.log(p[[0, 1, 0, 1], 1:] / p[[0, 1, 0, 1], :1]))

    def test_validation(self):
        with pytest.raises(ValueError):
            ComplexSystem(np.eye(2), np.zeros(3), 1.0, 4)
        with pytest.raises(ValueError):
            ComplexSystem(np.eye(2), np.zeros(2), 0.0, 4)
        with pytest.raises(ValueError):
            lift_to_real(ComplexSystem(np.eye(2), np.zeros(2), 1.0, 4), priors=np.ones((3, 2)) / 2)


def _real(n_rows, n_cols=2):
    G = np.arange(n_rows * n_cols, dtype=float).reshape(n_rows, n_cols)
    return RealSystem(G, np.arange(n_rows, dtype=float), 1.0, make_alphabet(4), np.zeros((n_cols, 1)))


class TestGrouping:
    def test_contiguous_pairs(self):
        g = make_grouping(_real(8), 4)
        assert [list(r) for r in g.index_sets] == [[0, 1], [2, 3], [4, 5], [6, 7]]
        np.testing.assert_array_equal(g.sub_received[2], [4, 5])
        np.testing.assert_array_equal(g.sub_channels[3], _real(8).G[6:8])

    def test_single_group(self):
        real = _real(6)
        g = make_grouping(real, 1)
        np.testing.assert_array_equal(g.sub_received[0], real.y)
        np.testing.assert_array_equal(g.sub_channels[0], real.G)

    def test_one_row_per_group(self):
        g = make_grouping(_real(6), 6)
        assert g.group_size == 1 and g.sub_channels.shape == (6, 1, 2)

    @pytest.mark.parametrize("U", [0, 4, 7, 2.5])
    def test_rejects_non_divisors(self, U):
        with pytest.raises(ValueError):
            make_grouping(_real(6), U)


class TestChannelFile:
    def test_round_trip(self, tmp_path, rng):
        H = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
        path = tmp_path / "h.txt"
        write_channel_file(path, H)
        np.testing.assert_array_equal(read_channel_file(path), H)

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "h.txt"
        path.write_text("# export\nnr=1 k=2\n\n0 0 1.0 0.0\n# mid\n0 1 0.5 -2\n")
        np.testing.assert_array_equal(read_channel_file(path), [[1.0, 0.5 - 2j]])

    @pytest.mark.parametrize(
        "text",
        [
            "",
            "nr=1\n0 0 1 0\n",
            "nr=1 k=1\n0 0 1\n",
            "nr=1 k=2\n0 0 1 0\n",
            "nr=1 k=2\n0 1 1 0\n0 0 1 0\n",
            "nr=1 k=2\n0 0 1 0\n0 0 1 0\n",
            "nr=1 k=1\n0 5 1 0\n",
            "nr=1 k=1\n0 0 nan 0\n",
            "nr=1 k=1\n0 0 x 0\n",
        ],
    )
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "h.txt"
        path.write_text(text)
        with pytest.raises(ChannelFileError):
            read_channel_file(path)
