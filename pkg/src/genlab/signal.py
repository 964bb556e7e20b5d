"""
Digital transmitter/receiver primitives.

PRBS bit generation, Gray-labelled square QAM, root-raised-cosine pulse
shaping and the matched-filter receiver front end. Everything here is a pure
function of its arguments.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import oaconvolve

# Feedback lags besides ``order`` itself: s[n] = s[n - order] ^ s[n - lag] ^ ...
# Orders 7-31 are the ITU-T O.150 trinomials x^order + x^lag + 1. Order 32 is
# x^32 + x^31 + x^30 + x^10 + 1, the reciprocal of the usual x^32 + x^22 + x^2 + x + 1;
# unlike the order-31 trinomial its windows stay balanced between datasets.
PRBS_POLYNOMIALS = {7: (6,), 15: (14,), 23: (18,), 31: (28,), 32: (31, 30, 10)}


@dataclass(frozen=True)
class ComplexSequence:
    """Sampled complex waveform, one row per polarization (or a single row)."""

    values: np.ndarray
    sample_rate: float

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.values) ** 2))


@dataclass(frozen=True)
class DpSymbolSequence:
    """Dual-polarization symbol stream."""

    h: np.ndarray
    v: np.ndarray
    symbol_rate: float

    def __post_init__(self):
        if len(self.h) != len(self.v):
            raise ValueError(f"polarization lengths differ: {len(self.h)} != {len(self.v)}")

    def __len__(self):
        return len(self.h)

    def stacked(self) -> np.ndarray:
        return np.stack([self.h, self.v])


@dataclass(frozen=True)
class Constellation:
    """Square QAM with per-axis Gray labelling.

    ``points`` are ordered row-major over (I level, Q level), lowest level
    first. ``labels[i]`` is the integer bit label of ``points[i]``; the most
    significant half of the label selects the I level.
    """

    points: np.ndarray
    bits_per_symbol: int
    labels: np.ndarray
    levels: np.ndarray = field(repr=False)
    scale: float = field(repr=False)

    @property
    def order(self) -> int:
        return len(self.points)

    @property
    def name(self) -> str:
        return f"QAM{self.order}"

    def point_of_label(self) -> np.ndarray:
        """Inverse labelling: index of the point carrying each label."""
        inverse = np.empty_like(self.labels)
        inverse[self.labels] = np.arange(len(self.labels))
        return inverse


def gray_code(n: np.ndarray | int):
    return n ^ (n >> 1)


def qam_constellation(order: int) -> Constellation:
    bits = int(round(np.log2(order)))
    if 2**bits != order or bits % 2:
        raise ValueError(f"only square QAM is supported, got order {order}")
    side = 2 ** (bits // 2)
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    scale = 1.0 / np.sqrt(2 * np.mean(levels**2))
    axis_labels = gray_code(np.arange(side))
    i_idx, q_idx = np.divmod(np.arange(order), side)
    points = scale * (levels[i_idx] + 1j * levels[q_idx])
    labels = (axis_labels[i_idx] << (bits // 2)) | axis_labels[q_idx]
    return Constellation(points=points, bits_per_symbol=bits, labels=labels,
                         levels=levels, scale=scale)


QAM16 = qam_constellation(16)
QAM64 = qam_constellation(64)


def constellation_for(modulation: str) -> Constellation:
    try:
        return {"QAM16": QAM16, "QAM64": QAM64}[modulation]
    except KeyError:
        raise ValueError(f"unknown modulation {modulation!r}") from None


def prbs_generate(order: int, length: int, seed: int) -> np.ndarray:
    """Bits from a maximal-length Fibonacci LFSR.

    The register holds the ``order`` most recent output bits, newest in bit 0,
    so ``seed=1`` means the bit just before the first output was a one. The
    output obeys ``s[n] = s[n - order] ^ s[n - lag]`` over the lags listed in
    ``PRBS_POLYNOMIALS``. A seed whose low ``order`` bits are all zero is
    remapped to the all-ones state.
    """
    if order not in PRBS_POLYNOMIALS:
        raise ValueError(f"unsupported PRBS order {order}; choose from {sorted(PRBS_POLYNOMIALS)}")
    if length < 1:
        raise ValueError("length must be >= 1")
    lags = PRBS_POLYNOMIALS[order]
    state = int(seed) & ((1 << order) - 1)
    if state == 0:
        state = (1 << order) - 1
    # history[k] = s[k - order]
    history = np.array([(state >> (order - 1 - k)) & 1 for k in range(order)], dtype=np.uint8)
    out = np.empty(order + length, dtype=np.uint8)
    out[:order] = history
    # each block of min(lags) outputs depends only on already-known bits
    block = min(lags)
    n = order
    while n < order + length:
        stop = min(n + block, order + length)
        acc = out[n - order:stop - order].copy()
        for lag in lags:
            acc ^= out[n - lag:stop - lag]
        out[n:stop] = acc
        n = stop
    return out[order:].copy()


def map_qam(bits: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Map bits (MSB first per symbol) onto unit-power Gray QAM points."""
    bits = np.asarray(bits, dtype=np.uint8)
    k = constellation.bits_per_symbol
    rem = bits.size % k
    if rem:
        raise ValueError(f"{bits.size} bits is not a multiple of {k} ({rem} left over)")
    weights = 1 << np.arange(k - 1, -1, -1)
    labels = bits.reshape(-1, k) @ weights
    return constellation.points[constellation.point_of_label()[labels]]


def decide(symbols: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Minimum-distance point index for every symbol.

    On a square grid the 2-D nearest point is the per-axis nearest level, so
    the search is separable. Ties go to the lowest point index.
    """
    symbols = np.asarray(symbols)
    lv = constellation.levels * constellation.scale
    side = len(lv)
    i_idx = np.argmin(np.abs(symbols.real[..., None] - lv), axis=-1)
    q_idx = np.argmin(np.abs(symbols.imag[..., None] - lv), axis=-1)
    return i_idx * side + q_idx


def demap_qam_hard(symbols: np.ndarray, constellation: Constellation) -> np.ndarray:
    k = constellation.bits_per_symbol
    labels = constellation.labels[decide(symbols, constellation)]
    shifts = np.arange(k - 1, -1, -1)
    return ((labels[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def rrc_taps(roll_off: float, span_symbols: int, sps: int) -> np.ndarray:
    """Root-raised-cosine impulse response.

    Scaled so that ``sum(taps**2) == sps``: unit-power symbols give a
    unit-power waveform, and the matched filter divides the cascade peak back
    to one.
    """
    if not 0 < roll_off <= 1:
        raise ValueError("roll_off must be in (0, 1]")
    if span_symbols % 2 or span_symbols < 2:
        raise ValueError("span_symbols must be a positive even integer")
    if sps < 2:
        raise ValueError("sps must be >= 2")
    b = roll_off
    t = np.arange(-span_symbols * sps // 2, span_symbols * sps // 2 + 1) / sps
    h = np.empty_like(t)
    center = t == 0
    singular = np.isclose(np.abs(t), 1 / (4 * b))
    regular = ~(center | singular)
    tr = t[regular]
    h[regular] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (
        np.pi * tr * (1 - (4 * b * tr) ** 2))
    h[center] = 1 - b + 4 * b / np.pi
    h[singular] = b / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                    + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
    return h * np.sqrt(sps / np.sum(h**2))


def upsample_shape(symbols: np.ndarray, sps: int, taps: np.ndarray,
                   sample_rate: float | None = None) -> ComplexSequence:
    """Zero-insert upsampling followed by full convolution with ``taps``.

    The output has ``len(symbols) * sps + len(taps) - 1`` samples; symbol k
    peaks at sample ``k * sps + (len(taps) - 1) // 2``.
    """
    if sps < 2:
        raise ValueError("sps must be >= 2")
    symbols = np.atleast_2d(symbols)
    up = np.zeros((symbols.shape[0], symbols.shape[1] * sps), dtype=complex)
    up[:, ::sps] = symbols
    wave = oaconvolve(up, taps[None, :], axes=1)
    return ComplexSequence(wave, sample_rate if sample_rate is not None else float(sps))


def matched_filter_downsample(waveform: np.ndarray, sps: int, taps: np.ndarray,
                              n_symbols: int | None = None) -> np.ndarray:
    """Matched filter, group-delay removal and symbol-instant sampling.

    ``waveform`` is the full-convolution output of :func:`upsample_shape`
    (one row per polarization, or 1-D).
    """
    waveform = np.asarray(waveform)
    squeeze = waveform.ndim == 1
    waveform = np.atleast_2d(waveform)
    n_taps = len(taps)
    if n_symbols is None:
        n_symbols, extra = divmod(waveform.shape[1] - (n_taps - 1), sps)
        if extra or n_symbols < 1:
            raise ValueError(f"waveform length {waveform.shape[1]} does not fit sps={sps} "
                             f"with {n_taps} taps")
    elif waveform.shape[1] < n_symbols * sps + n_taps - 1:
        raise ValueError("waveform too short for the requested symbol count")
    mf = taps[::-1] / np.sum(taps**2)
    delay = n_taps - 1
    out = oaconvolve(waveform, mf[None, :], axes=1)[:, delay:delay + n_symbols * sps:sps]
    return out[0] if squeeze else out


def brickwall_lowpass(waveform: np.ndarray, sample_rate: float, bandwidth: float) -> np.ndarray:
    """Ideal low-pass keeping |f| <= bandwidth / 2 (two-sided width ``bandwidth``)."""
    f = np.fft.fftfreq(waveform.shape[-1], 1 / sample_rate)
    return np.fft.ifft(np.fft.fft(waveform, axis=-1) * (np.abs(f) <= bandwidth / 2), axis=-1)
