import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfc

from genlab.channel import angular_frequency, derive_beta2
from genlab.rxdsp import (ber, cdc_compensate, cross_correlation, empirical_pdf, mi_lower_bound,
                          normalize_gain_phase, ser, total_variation)
from genlab.signal import QAM16, QAM64, ComplexSequence, DpSymbolSequence


def qam_symbols(n, seed=0, const=QAM16):
    return const.points[np.random.default_rng(seed).integers(0, const.order, n)]


def awgn(x, snr_db, seed):
    sigma2 = 10 ** (-snr_db / 10)
    rng = np.random.default_rng(seed)
    return x + np.sqrt(sigma2 / 2) * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))


def gh_mi_oracle(const, sigma2, n_nodes=40):
    """Exact auxiliary-channel MI for a Gaussian channel by 2-D Gauss-Hermite."""
    t, w = np.polynomial.hermite.hermgauss(n_nodes)
    noise = np.sqrt(sigma2) * (t[:, None] + 1j * t[None, :]).ravel()
    weight = (w[:, None] * w[None, :]).ravel() / np.pi
    x = const.points
    total = 0.0
    for xi in x:
        d = np.abs(xi + noise[:, None] - x[None, :]) ** 2 - np.abs(noise[:, None]) ** 2
        total += np.sum(weight * np.log2(np.sum(np.exp(-d / sigma2), axis=1)))
    return np.log2(len(x)) - total / len(x)


# --- CDC -------------------------------------------------------------------------------

def dispersed(x, fs, total_dispersion):
    beta2 = derive_beta2(total_dispersion)
    om = angular_frequency(x.shape[-1], fs)
    return np.fft.ifft(np.fft.fft(x, axis=-1) * np.exp(0.5j * beta2 * om**2), axis=-1)


def test_cdc_inverts_dispersion():
    x = np.random.default_rng(0).normal(size=(2, 4096)) + 0j
    fs = 275e9
    y = ComplexSequence(dispersed(x, fs, 17 * 250), fs)
    out = cdc_compensate(y, 17 * 250).values
    assert np.sqrt(np.mean(np.abs(out - x) ** 2)) < 1e-9
    ident = cdc_compensate(ComplexSequence(x, fs), 0.0).values
    np.testing.assert_allclose(ident, x, atol=1e-15)


def test_cdc_plus_minus_identity_and_unitary():
    x = np.random.default_rng(1).normal(size=4096) * (1 + 0.5j)
    s = ComplexSequence(x, 1e11)
    once = cdc_compensate(s, 850.0)
    back = cdc_compensate(once, -850.0).values
    assert np.max(np.abs(back - x)) < 1e-12
    assert abs(once.power - s.power) / s.power < 1e-12
    with pytest.raises(ValueError):
        cdc_compensate(s, np.inf)


# --- normalization ---------------------------------------------------------------------

def test_normalize_exact_gain():
    tx = qam_symbols(500)
    rx = 2 * np.exp(1j * np.pi / 4) * tx
    np.testing.assert_allclose(normalize_gain_phase(rx, tx), tx, atol=1e-14)
    np.testing.assert_allclose(normalize_gain_phase(tx, tx), tx, atol=1e-15)


def test_normalize_is_least_squares_optimal():
    tx = qam_symbols(2000, 1)
    rx = 0.7 * np.exp(0.3j) * awgn(tx, 15, 2)
    out = normalize_gain_phase(rx, tx)
    best = np.mean(np.abs(out - tx) ** 2)
    g0 = np.vdot(rx, tx) / np.vdot(rx, rx)
    for dr in np.linspace(-0.05, 0.05, 11):
        for di in np.linspace(-0.05, 0.05, 11):
            assert np.mean(np.abs((g0 + dr + 1j * di) * rx - tx) ** 2) >= best - 1e-15


def test_normalize_per_polarization_and_errors():
    tx = np.stack([qam_symbols(300, 3), qam_symbols(300, 4)])
    rx = np.array([[2.0], [0.5j]]) * tx
    np.testing.assert_allclose(normalize_gain_phase(rx, tx), tx, atol=1e-14)
    with pytest.raises(ValueError):
        normalize_gain_phase(np.zeros(200), qam_symbols(200))
    with pytest.raises(ValueError):
        normalize_gain_phase(tx[0, :50], tx[0, :50])


# --- MI --------------------------------------------------------------------------------

def test_mi_noiseless_exact():
    tx = qam_symbols(10_000)
    assert mi_lower_bound(tx, tx, QAM16) == 4.0
    assert mi_lower_bound(qam_symbols(1000, const=QAM64), qam_symbols(1000, const=QAM64), QAM64) == 6.0


@pytest.mark.parametrize("snr_db", [10, 15, 20])
def test_mi_matches_quadrature(snr_db):
    tx = qam_symbols(10**5, snr_db)
    rx = awgn(tx, snr_db, 100 + snr_db)
    oracle = gh_mi_oracle(QAM16, 10 ** (-snr_db / 10))
    assert abs(mi_lower_bound(rx, tx, QAM16) - oracle) < 0.02


def test_mi_independent_is_near_zero():
    tx = qam_symbols(10**5, 5)
    rx = np.random.default_rng(6).permutation(awgn(tx, 15, 7))
    assert mi_lower_bound(rx, tx, QAM16) <= 0.05


def test_mi_rotation_then_normalization():
    tx = qam_symbols(20_000, 8)
    rx = normalize_gain_phase(awgn(tx, 14, 9), tx)
    ref = mi_lower_bound(rx, tx, QAM16)
    rotated = normalize_gain_phase(np.exp(0.9j) * rx, tx)
    assert abs(mi_lower_bound(rotated, tx, QAM16) - ref) < 1e-9


def test_mi_noise_ladder_monotone():
    tx = qam_symbols(10**5, 10)
    rng = np.random.default_rng(11)
    base = rng.standard_normal(tx.shape) + 1j * rng.standard_normal(tx.shape)
    mis = [mi_lower_bound(tx + np.sqrt(v / 2) * base, tx, QAM16) for v in [0.01, 0.03, 0.06, 0.1, 0.2]]
    assert all(b <= a + 0.01 for a, b in zip(mis, mis[1:]))


def test_mi_chunking_invariant_and_permutation():
    tx = qam_symbols(5000, 12)
    rx = awgn(tx, 12, 13)
    a = mi_lower_bound(rx, tx, QAM16)
    assert mi_lower_bound(rx, tx, QAM16, chunk=777) == pytest.approx(a, abs=1e-12)
    p = np.random.default_rng(0).permutation(5000)
    assert mi_lower_bound(rx[p], tx[p], QAM16) == pytest.approx(a, abs=1e-12)
    with pytest.raises(ValueError):
        mi_lower_bound(rx[:10], tx[:11], QAM16)


def gh_mi_oracle_per_point(const, var, n_nodes=40):
    """Auxiliary-channel MI when point i sees circular noise of variance var[i]."""
    t, w = np.polynomial.hermite.hermgauss(n_nodes)
    unit = (t[:, None] + 1j * t[None, :]).ravel()
    weight = (w[:, None] * w[None, :]).ravel() / np.pi
    x = const.points
    total = 0.0
    for xi, vi in zip(x, var):
        n = np.sqrt(vi) * unit
        log_q = -np.abs(xi + n[:, None] - x[None, :]) ** 2 / var[None, :] - np.log(var[None, :])
        own = -np.abs(n) ** 2 / vi - np.log(vi)
        total += np.sum(weight * np.log2(np.sum(np.exp(log_q - own[:, None]), axis=1)))
    return np.log2(len(x)) - total / len(x)


def test_mi_per_point_variance():
    tx = qam_symbols(10**5, 21)
    rx = awgn(tx, 15, 22)
    assert mi_lower_bound(rx, tx, QAM16, per_point=True) == pytest.approx(
        mi_lower_bound(rx, tx, QAM16), abs=0.01)
    # outer points noisier than inner ones
    var = np.where(np.abs(QAM16.points) > 1.0, 0.06, 0.01)
    idx = np.random.default_rng(23).integers(0, 16, 10**5)
    tx = QAM16.points[idx]
    rng = np.random.default_rng(24)
    rx = tx + np.sqrt(var[idx] / 2) * (rng.standard_normal(tx.size) + 1j * rng.standard_normal(tx.size))
    per_point = mi_lower_bound(rx, tx, QAM16, per_point=True)
    assert abs(per_point - gh_mi_oracle_per_point(QAM16, var)) < 0.02
    assert per_point > mi_lower_bound(rx, tx, QAM16)
    assert mi_lower_bound(tx, tx, QAM16, per_point=True) == 4.0


# --- BER -------------------------------------------------------------------------------

def test_ber_zero_and_negation():
    tx = qam_symbols(4000, 14)
    assert ber(tx, tx, QAM16) == 0.0 and ser(tx, tx, QAM16) == 0.0
    # negation reverses each axis' level order; on the Gray table 00,01,11,10
    # the reversed table 10,11,01,00 differs in exactly one of two bits
    table = [0b00, 0b01, 0b11, 0b10]
    flips = np.mean([bin(table[i] ^ table[3 - i]).count("1") / 2 for i in range(4)])
    assert ber(-tx, tx, QAM16) == pytest.approx(flips)


@pytest.mark.parametrize("snr_db", [12, 14])
def test_ber_awgn_q_function(snr_db):
    snr = 10 ** (snr_db / 10)
    # Gray 16-QAM, nearest-neighbour approximation: 3/4 Q(sqrt(SNR / 5))
    q = 0.5 * erfc(np.sqrt(snr / 5) / np.sqrt(2))
    expected = 0.75 * q
    tx = qam_symbols(10**6, snr_db)
    assert ber(awgn(tx, snr_db, 7), tx, QAM16) == pytest.approx(expected, rel=0.2)


@given(st.integers(0, 2**31), st.floats(0.0, 0.3))
@settings(max_examples=25, deadline=None)
def test_ber_zero_iff_same_decisions(seed, noise):
    tx = qam_symbols(200, seed)
    rx = tx + noise * (np.random.default_rng(seed).random(200) - 0.5)
    assert (ber(rx, tx, QAM16) == 0) == (ser(rx, tx, QAM16) == 0)


# --- leakage check -----------------------------------------------------------------------

def test_cross_correlation_self_delay_and_independent():
    a = qam_symbols(5000, 20)
    assert cross_correlation(a, a) == pytest.approx(1.0)
    b = np.concatenate([qam_symbols(10, 21), a[:-10]])      # b[n + 10] = a[n]
    assert cross_correlation(a, b) == pytest.approx(1.0)
    assert cross_correlation(a, b, max_lag=9) < 0.1
    # max over 129 lags of independent |rho| sits near sqrt(ln(129) / N)
    c = qam_symbols(20000, 22)
    assert cross_correlation(qam_symbols(20000, 23), c) < 0.03


def test_cross_correlation_dual_pol_and_errors():
    h, v = qam_symbols(3000, 1), qam_symbols(3000, 2)
    a = DpSymbolSequence(h, v, 1.0)
    assert cross_correlation(a, a) == pytest.approx(1.0)
    assert 0 <= cross_correlation(a, DpSymbolSequence(v, h, 1.0)) <= 1
    with pytest.raises(ValueError):
        cross_correlation(np.ones(500), h)
    with pytest.raises(ValueError):
        cross_correlation(h[:50], v[:50])


# --- PDFs ----------------------------------------------------------------------------------

def test_empirical_pdf_basic(tmp_path):
    pdf = empirical_pdf(np.full(100, 0.3 + 0.3j), (-1.5, 1.5, 30))
    assert np.count_nonzero(pdf.density) == 1 and pdf.density.sum() == 1.0
    rx = awgn(qam_symbols(20000), 15, 1)
    pdf = empirical_pdf(rx, (-1.5, 1.5, 60))
    assert abs(pdf.density.sum() - 1) < 1e-12
    clipped = empirical_pdf(np.array([5 + 0j, 0j, -5j]), (-1, 1, 4))
    assert clipped.n_clipped == 2 and clipped.density.sum() == 1
    with pytest.raises(ValueError):
        empirical_pdf(rx, (1, 1, 10))
    with pytest.raises(ValueError):
        empirical_pdf(rx, (-1, 1, 1))
    path = tmp_path / "pdf.csv"
    pdf.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "i_center,q_center,density" and len(lines) == 1 + 60 * 60


def test_total_variation_separates_domains():
    tx = qam_symbols(50_000, 3)
    clean = empirical_pdf(awgn(tx, 22, 1), (-1.5, 1.5, 40))
    noisy = empirical_pdf(awgn(tx, 16, 2), (-1.5, 1.5, 40))
    assert total_variation(clean, clean) == 0
    assert total_variation(clean, noisy) > 0.05
