import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genlab.signal import (PRBS_POLYNOMIALS, QAM16, QAM64, ComplexSequence, DpSymbolSequence, brickwall_lowpass,
                           constellation_for, decide, demap_qam_hard, gray_code, map_qam,
                           matched_filter_downsample, prbs_generate, qam_constellation, rrc_taps,
                           upsample_shape)


def lfsr_reference(order, lags, state, n):
    """Bit-by-bit Fibonacci LFSR, register newest-bit-first in bit 0."""
    out = []
    reg = [(state >> k) & 1 for k in range(order)]  # reg[k] = bit emitted k+1 steps ago
    for _ in range(n):
        b = reg[order - 1]
        for lag in lags:
            b ^= reg[lag - 1]
        out.append(b)
        reg = [b] + reg[:-1]
    return np.array(out, dtype=np.uint8)


def gf2_mulmod(a, b, mod, deg):
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if (a >> deg) & 1:
            a ^= mod
    return r


def gf2_powmod(e, mod, deg):
    """x**e modulo the GF(2) polynomial ``mod`` (bit k = coefficient of x^k)."""
    result, base = 1, 2
    while e:
        if e & 1:
            result = gf2_mulmod(result, base, mod, deg)
        base = gf2_mulmod(base, base, mod, deg)
        e >>= 1
    return result


def prime_factors(n):
    out, p = set(), 2
    while p * p <= n:
        while n % p == 0:
            out.add(p)
            n //= p
        p += 1
    if n > 1:
        out.add(n)
    return out


# --- PRBS -----------------------------------------------------------------

def test_prbs7_seed1_first_bits():
    # history s[-7..-1] = 0000001 and s[n] = s[n-7] ^ s[n-6]:
    # s[5] = s[-2] ^ s[-1] = 1, s[6] = s[-1] ^ s[0] = 1, earlier bits are 0
    assert prbs_generate(7, 7, 1).tolist() == [0, 0, 0, 0, 0, 1, 1]


@pytest.mark.parametrize("order,lags", [(7, (6,)), (15, (14,)), (23, (18,)), (31, (28,)),
                                        (32, (31, 30, 10))])
def test_prbs_matches_bitwise_reference(order, lags):
    for seed in (1, 0x55, 12345, 0xDEADBEEF):
        np.testing.assert_array_equal(prbs_generate(order, 300, seed),
                                      lfsr_reference(order, lags, seed & ((1 << order) - 1), 300))


@pytest.mark.parametrize("order", sorted(PRBS_POLYNOMIALS))
def test_prbs_polynomials_are_primitive(order):
    # characteristic polynomial of the recurrence; primitive iff x has order 2^n - 1
    poly = (1 << order) | 1
    for lag in PRBS_POLYNOMIALS[order]:
        poly |= 1 << (order - lag)
    period = 2**order - 1
    assert gf2_powmod(period, poly, order) == 1
    for q in prime_factors(period):
        assert gf2_powmod(period // q, poly, order) != 1


@pytest.mark.parametrize("seed", [1, 2, 77, 127])
def test_prbs7_period_is_maximal(seed):
    bits = prbs_generate(7, 3 * 127, seed)
    np.testing.assert_array_equal(bits[:127], bits[127:254])
    for p in range(1, 127):
        assert not np.array_equal(bits[:127], np.roll(bits[:127], p))


def test_prbs15_period():
    bits = prbs_generate(15, 2 * 32767, 9)
    np.testing.assert_array_equal(bits[:32767], bits[32767:])
    # balanced: 2^(n-1) ones per period
    assert bits[:32767].sum() == 2**14


def test_prbs_zero_seed_maps_to_all_ones():
    np.testing.assert_array_equal(prbs_generate(7, 50, 0), prbs_generate(7, 50, 127))
    np.testing.assert_array_equal(prbs_generate(7, 50, 128), prbs_generate(7, 50, 127))


def test_prbs_errors():
    with pytest.raises(ValueError, match="unsupported"):
        prbs_generate(9, 10, 1)
    with pytest.raises(ValueError):
        prbs_generate(7, 0, 1)


@given(st.sampled_from([7, 15, 23, 31, 32]), st.integers(1, 2000), st.integers(0, 2**40))
@settings(max_examples=30, deadline=None)
def test_prbs_deterministic(order, n, seed):
    a = prbs_generate(order, n, seed)
    assert a.shape == (n,) and set(np.unique(a)) <= {0, 1}
    np.testing.assert_array_equal(a, prbs_generate(order, n, seed))


# --- constellations ---------------------------------------------------------

def test_qam_scales():
    assert QAM16.scale == pytest.approx(1 / np.sqrt(10), abs=1e-15)
    assert QAM64.scale == pytest.approx(1 / np.sqrt(42), abs=1e-15)


@pytest.mark.parametrize("const", [QAM16, QAM64])
def test_constellation_invariants(const):
    assert len(const.points) == 2**const.bits_per_symbol
    assert abs(np.mean(np.abs(const.points) ** 2) - 1) < 1e-12
    assert sorted(const.labels.tolist()) == list(range(const.order))
    # Gray property: horizontal/vertical neighbours differ by exactly one bit
    side = int(np.sqrt(const.order))
    grid = const.labels.reshape(side, side)
    for a, b in [(grid[1:, :], grid[:-1, :]), (grid[:, 1:], grid[:, :-1])]:
        assert all(bin(int(x)).count("1") == 1 for x in (a ^ b).ravel())


def test_gray_table_two_bits():
    assert [int(gray_code(k)) for k in range(4)] == [0b00, 0b01, 0b11, 0b10]


def test_qam16_all_zero_bits_point():
    # 00 per axis is the Gray code of index 0, the lowest level -3
    assert map_qam(np.zeros(4), QAM16)[0] == pytest.approx((-3 - 3j) / np.sqrt(10))
    # 10|10 -> Gray index 3 on both axes -> (3, 3)
    assert map_qam(np.array([1, 0, 1, 0]), QAM16)[0] == pytest.approx((3 + 3j) / np.sqrt(10))


def test_map_qam_remainder_error():
    with pytest.raises(ValueError, match="3 left over"):
        map_qam(np.zeros(7), QAM16)


def test_unsupported_constellation():
    with pytest.raises(ValueError):
        qam_constellation(32)
    with pytest.raises(ValueError):
        constellation_for("QPSK")


@pytest.mark.parametrize("const", [QAM16, QAM64])
def test_demap_roundtrip_1e4(const):
    k = const.bits_per_symbol
    bits = np.random.default_rng(0).integers(0, 2, 10_000 - 10_000 % k)
    np.testing.assert_array_equal(demap_qam_hard(map_qam(bits, const), const), bits)


@given(st.sampled_from([QAM16, QAM64]), st.integers(1, 300), st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_bits_symbols_bits_identity(const, n_sym, seed):
    bits = prbs_generate(23, n_sym * const.bits_per_symbol, seed)
    np.testing.assert_array_equal(demap_qam_hard(map_qam(bits, const), const), bits)


def test_decide_nearest_and_tie_break():
    s = 1.1 * (3 + 3j) / np.sqrt(10)
    bits = demap_qam_hard(np.array([s]), QAM16)
    ref = demap_qam_hard(np.array([(3 + 3j) / np.sqrt(10)]), QAM16)
    np.testing.assert_array_equal(bits, ref)
    # midpoint between (-3,-3) [index 0] and (-1,-3) [index 4]
    mid = (-2 - 3j) / np.sqrt(10)
    assert decide(np.array([mid]), QAM16)[0] == 0
    # exhaustive oracle against brute-force 2-D minimum distance
    y = np.random.default_rng(1).normal(size=2000) * 1.5 + 1j * np.random.default_rng(2).normal(size=2000)
    brute = np.argmin(np.abs(y[:, None] - QAM16.points[None, :]), axis=1)
    np.testing.assert_array_equal(decide(y, QAM16), brute)


# --- pulse shaping ----------------------------------------------------------

def test_rrc_shape_and_peak():
    h = rrc_taps(0.1, 32, 8)
    assert len(h) == 32 * 8 + 1
    assert np.argmax(h) == len(h) // 2
    assert np.sum(h**2) == pytest.approx(8)
    np.testing.assert_allclose(h, h[::-1], atol=1e-15)


def test_rrc_singular_points_finite_and_continuous():
    # roll-off 0.25 puts t = +-1/(4b) = +-1 symbol exactly on the grid
    h = rrc_taps(0.25, 8, 4)
    c = len(h) // 2
    assert np.all(np.isfinite(h))
    # the limit value must agree with the regular formula just off the pole
    b, t = 0.25, 1.0 + 1e-7
    regular = (np.sin(np.pi * t * (1 - b)) + 4 * b * t * np.cos(np.pi * t * (1 + b))) / (
        np.pi * t * (1 - (4 * b * t) ** 2))
    unscaled = rrc_taps(0.25, 8, 4) / h[c] * (1 - b + 4 * b / np.pi)
    assert unscaled[c + 4] == pytest.approx(regular, abs=1e-6)
    assert unscaled[c - 4] == pytest.approx(regular, abs=1e-6)


def test_rrc_errors():
    for args in [(0, 8, 4), (1.5, 8, 4), (0.1, 7, 4), (0.1, 8, 1)]:
        with pytest.raises(ValueError):
            rrc_taps(*args)


def test_rrc_cascade_is_nyquist():
    h = rrc_taps(0.1, 256, 8)
    rc = np.convolve(h, h[::-1]) / np.sum(h**2)
    c = len(rc) // 2
    samples = rc[c % 8::8]
    peak = c // 8
    err = np.abs(samples.copy())
    err[peak] = abs(samples[peak] - 1)
    assert err.max() < 1e-3


def test_shaped_bandwidth_matches_rolloff():
    # 99.99% of the energy lies within (1 + roll_off) * Rs two-sided
    h = rrc_taps(0.1, 256, 8)
    f = np.fft.fftfreq(2**16, 1 / 8)
    psd = np.abs(np.fft.fft(h, 2**16)) ** 2
    inside = psd[np.abs(f) <= 1.1 / 2].sum() / psd.sum()
    assert inside > 0.9999
    assert 34.4e9 * 1.1 == pytest.approx(37.84e9)


def test_upsample_zero_and_impulse():
    h = rrc_taps(0.1, 16, 4)
    assert np.all(upsample_shape(np.zeros(10), 4, h).values == 0)
    w = upsample_shape(np.array([1.0]), 4, h).values[0]
    assert len(w) == 4 + len(h) - 1
    np.testing.assert_allclose(w[:len(h)].real, h, atol=1e-12)
    w = upsample_shape(np.array([0, 0, 1.0]), 4, h).values[0]
    np.testing.assert_allclose(w[8:8 + len(h)].real, h, atol=1e-12)
    assert np.allclose(w[:8], 0, atol=1e-12)


def test_shaped_power_near_one():
    bits = prbs_generate(23, 4 * 2**12, 3)
    sym = map_qam(bits, QAM16)
    h = rrc_taps(0.1, 256, 8)
    w = upsample_shape(sym, 8, h).values[0]
    delay = (len(h) - 1) // 2
    body = w[delay:delay + len(sym) * 8]
    assert abs(np.mean(np.abs(body) ** 2) - 1) < 0.02


@pytest.mark.parametrize("span,sps", [(256, 8), (256, 4)])
def test_loopback_per_symbol(span, sps):
    sym = map_qam(prbs_generate(23, 4 * 3000, 5), QAM16)
    h = rrc_taps(0.1, span, sps)
    out = matched_filter_downsample(upsample_shape(sym, sps, h).values, sps, h)[0]
    assert np.max(np.abs(out - sym)) < 1.1e-3
    assert abs(np.mean(np.abs(out) ** 2) / np.mean(np.abs(sym) ** 2) - 1) < 0.02


def test_loopback_at_wider_rolloff_short_span():
    sym = map_qam(prbs_generate(23, 4 * 2000, 6), QAM16)
    h = rrc_taps(0.5, 32, 4)
    out = matched_filter_downsample(upsample_shape(sym, 4, h).values, 4, h)[0]
    assert np.max(np.abs(out - sym)) < 1e-3


def test_matched_filter_zero_and_errors():
    h = rrc_taps(0.1, 16, 4)
    z = np.zeros(10 * 4 + len(h) - 1, dtype=complex)
    assert np.all(matched_filter_downsample(z, 4, h) == 0)
    with pytest.raises(ValueError):
        matched_filter_downsample(np.zeros(10 * 4 + len(h)), 4, h)
    with pytest.raises(ValueError):
        matched_filter_downsample(z, 4, h, n_symbols=11)


def test_types_validate():
    with pytest.raises(ValueError):
        ComplexSequence(np.array([1, np.nan]), 1.0)
    with pytest.raises(ValueError):
        ComplexSequence(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        DpSymbolSequence(np.ones(3), np.ones(4), 1.0)


def test_brickwall_lowpass_removes_out_of_band_tone():
    n, fs = 1024, 8.0
    t = np.arange(n) / fs
    x = np.exp(2j * np.pi * 0.5 * t) + np.exp(2j * np.pi * 3.0 * t)
    y = brickwall_lowpass(x, fs, 2.0)
    np.testing.assert_allclose(y, np.exp(2j * np.pi * 0.5 * t), atol=1e-12)
