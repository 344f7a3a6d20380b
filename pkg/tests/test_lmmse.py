import numpy as np
import pytest
from conftest import random_real_system

from giga.lmmse import lmmse_detect, lmmse_soft, lmmse_soft_batch, nearest_indices
from giga.system import RealSystem, make_alphabet


def test_identity_shrinkage():
    a = make_alphabet(16)
    s = a.points[[0, 3, 1, 2]]
    out = lmmse_detect(RealSystem(np.eye(4), s.copy(), 1.0, a, np.zeros((4, 3))))
    np.testing.assert_allclose(out.soft, s / 2, atol=1e-15)
    np.testing.assert_array_equal(out.real_decisions, a.points[nearest_indices(s / 2, a)])


def test_zero_forcing_limit(rng):
    a = make_alphabet(64)
    Q, _ = np.linalg.qr(rng.standard_normal((12, 6)))
    idx = rng.integers(0, 8, 6)
    s = a.points[idx]
    out = lmmse_detect(RealSystem(Q, Q @ s, 1e-12, a, np.zeros((6, 7))))
    np.testing.assert_allclose(out.soft, s, atol=1e-9)
    np.testing.assert_array_equal(out.real_decisions, s)


def test_explicit_inverse_oracle(rng):
    G = rng.standard_normal((8, 4))
    y = rng.standard_normal(8)
    ref = np.linalg.inv(G.T @ G + 0.37 * np.eye(4)) @ G.T @ y
    np.testing.assert_allclose(lmmse_soft(G, y, 0.37), ref, atol=1e-10)


def test_batch_matches_single(rng):
    G = rng.standard_normal((5, 8, 4))
    y = rng.standard_normal((5, 8))
    nv = rng.uniform(0.1, 1, 5)
    out = lmmse_soft_batch(G, y, nv)
    for b in range(5):
        np.testing.assert_allclose(out[b], lmmse_soft(G[b], y[b], nv[b]), atol=1e-12)


def test_nearest_ties_go_low():
    a = make_alphabet(16)
    mid = 0.5 * (a.points[1] + a.points[2])
    assert nearest_indices([mid], a)[0] == 1
    assert nearest_indices([-10.0, 10.0], a).tolist() == [0, 3]


def test_decisions_in_constellation(rng):
    real_sys, _ = random_real_system(rng, 3, 5, mod_order=16, snr_db=5)
    out = lmmse_detect(real_sys)
    assert np.isin(out.real_decisions, real_sys.alphabet.points).all()
    np.testing.assert_array_equal(out.complex_decisions, out.real_decisions[:3] + 1j * out.real_decisions[3:])


def test_rejects_nonpositive_noise():
    a = make_alphabet(4)
    with pytest.raises(ValueError):
        lmmse_detect(RealSystem(np.eye(2), np.zeros(2), 0.0, a, np.zeros((2, 1))))
