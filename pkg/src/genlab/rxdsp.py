"""Linear receiver processing and performance metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.special import logsumexp

from .signal import ComplexSequence, Constellation, decide, demap_qam_hard


def cdc_compensate(waveform: ComplexSequence, total_dispersion: float,
                   wavelength_nm: float = 1550.0) -> ComplexSequence:
    """Undo accumulated chromatic dispersion (ps/nm) with an all-pass filter."""
    from .channel import angular_frequency, derive_beta2

    if not np.isfinite(total_dispersion):
        raise ValueError("total dispersion must be finite")
    values = np.atleast_2d(waveform.values)
    beta2_total = derive_beta2(total_dispersion, wavelength_nm)
    omega = angular_frequency(values.shape[1], waveform.sample_rate)
    h = np.exp(-0.5j * beta2_total * omega**2)
    out = sfft.ifft(sfft.fft(values, axis=1) * h, axis=1)
    return ComplexSequence(out.reshape(np.shape(waveform.values)), waveform.sample_rate)


def normalize_gain_phase(rx: np.ndarray, tx: np.ndarray) -> np.ndarray:
    """Scale each polarization row of ``rx`` by its least-squares complex
    gain ``<tx, rx> / <rx, rx>`` towards ``tx``."""
    rx = np.asarray(rx, dtype=complex)
    tx = np.asarray(tx, dtype=complex)
    if rx.shape != tx.shape:
        raise ValueError(f"shape mismatch {rx.shape} vs {tx.shape}")
    if rx.shape[-1] < 100:
        raise ValueError("need at least 100 symbols to estimate the gain")
    energy = np.sum(np.abs(rx) ** 2, axis=-1, keepdims=True)
    if np.any(energy == 0):
        raise ValueError("received sequence is all zero")
    gain = np.sum(tx * np.conj(rx), axis=-1, keepdims=True) / energy
    return gain * rx


def mi_lower_bound(rx: np.ndarray, tx: np.ndarray, constellation: Constellation,
                   sigma2: float | None = None, chunk: int = 65536,
                   per_point: bool = False) -> float:
    """Achievable rate (bits/symbol) of a mismatched decoder that assumes a
    circular Gaussian channel with pooled variance ``mean|rx - tx|^2``.

    Inputs are uniformly distributed over ``constellation``; ``tx`` must hold
    constellation points. The estimate is returned unclamped, so it can be
    negative for a badly matched channel.

    With ``per_point=True`` each constellation point gets its own variance,
    estimated from the samples sent at that point (points never sent fall
    back to the pooled value). ``sigma2`` then is ignored.
    """
    y = np.ravel(rx)
    x = np.ravel(tx)
    if y.shape != x.shape:
        raise ValueError("rx and tx must be aligned")
    m = constellation.order
    pts = constellation.points
    err2 = np.abs(y - x) ** 2
    pooled = float(np.mean(err2)) if sigma2 is None or per_point else float(sigma2)
    if pooled == 0:
        return float(np.log2(m))
    if per_point:
        idx = np.argmin(np.abs(x[:, None] - pts[None, :]), axis=1)
        counts = np.bincount(idx, minlength=m)
        sums = np.bincount(idx, weights=err2, minlength=m)
        var = np.where(counts > 0, sums / np.maximum(counts, 1), pooled)
        var = np.maximum(var, np.finfo(float).tiny)
    else:
        var = np.full(m, pooled)
        idx = None
    total = 0.0
    for start in range(0, y.size, chunk):
        yc, xc = y[start:start + chunk], x[start:start + chunk]
        metric = -np.abs(yc[:, None] - pts[None, :]) ** 2 / var - np.log(var)
        if idx is None:
            own = -np.abs(yc - xc) ** 2 / pooled - np.log(pooled)
        else:
            v = var[idx[start:start + chunk]]
            own = -np.abs(yc - xc) ** 2 / v - np.log(v)
        total += np.sum(own - logsumexp(metric, axis=1))
    return float(np.log2(m) + total / y.size / np.log(2))


def ber(rx: np.ndarray, tx: np.ndarray, constellation: Constellation) -> float:
    b_rx = demap_qam_hard(np.ravel(rx), constellation)
    b_tx = demap_qam_hard(np.ravel(tx), constellation)
    return float(np.mean(b_rx != b_tx))


def ser(rx: np.ndarray, tx: np.ndarray, constellation: Constellation) -> float:
    return float(np.mean(decide(np.ravel(rx), constellation) != decide(np.ravel(tx), constellation)))


def _flat_pols(a) -> np.ndarray:
    if hasattr(a, "stacked"):
        a = a.stacked()
    return np.ravel(np.asarray(a, dtype=complex))


def cross_correlation(a, b, max_lag: int = 64) -> float:
    """Largest normalized complex cross-covariance magnitude over lags
    ``|k| <= max_lag``, pairing ``a[n]`` with ``b[n + k]`` on the overlap.

    Dual-polarization inputs are concatenated H then V.
    """
    a, b = _flat_pols(a), _flat_pols(b)
    n = min(a.size, b.size)
    if n < 100:
        raise ValueError("need at least 100 samples")
    a, b = a[:n], b[:n]
    if np.var(a) == 0 or np.var(b) == 0:
        raise ValueError("zero-variance input")
    best = 0.0
    for k in range(-max_lag, max_lag + 1):
        if k >= 0:
            sa, sb = a[:n - k], b[k:]
        else:
            sa, sb = a[-k:], b[:n + k]
        sa = sa - sa.mean()
        sb = sb - sb.mean()
        den = np.sqrt(np.sum(np.abs(sa) ** 2) * np.sum(np.abs(sb) ** 2))
        if den > 0:
            best = max(best, abs(np.vdot(sb, sa)) / den)
    return float(min(best, 1.0))


@dataclass
class EmpiricalPdf:
    density: np.ndarray      # [i_bin, q_bin], sums to 1
    i_centers: np.ndarray
    q_centers: np.ndarray
    n_clipped: int           # samples outside the grid, folded into edge bins

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i_center", "q_center", "density"])
            for i, ic in enumerate(self.i_centers):
                for q, qc in enumerate(self.q_centers):
                    w.writerow([repr(float(ic)), repr(float(qc)), repr(float(self.density[i, q]))])


def empirical_pdf(symbols, grid: tuple[float, float, int]) -> EmpiricalPdf:
    lo, hi, bins = grid
    if bins < 2 or not hi > lo:
        raise ValueError(f"degenerate grid {grid}")
    s = _flat_pols(symbols)
    edges = np.linspace(lo, hi, bins + 1)
    i = np.clip(s.real, lo, hi)
    q = np.clip(s.imag, lo, hi)
    clipped = int(np.count_nonzero((i != s.real) | (q != s.imag)))
    counts, _, _ = np.histogram2d(i, q, bins=[edges, edges])
    centers = (edges[:-1] + edges[1:]) / 2
    return EmpiricalPdf(counts / counts.sum(), centers, centers.copy(), clipped)


def total_variation(p: EmpiricalPdf, q: EmpiricalPdf) -> float:
    return float(0.5 * np.sum(np.abs(p.density - q.density)))
