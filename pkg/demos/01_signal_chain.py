"""
Transmitter building blocks
===========================

PRBS bits are Gray-mapped onto square QAM, shaped with a root-raised-cosine
filter and recovered by the matched filter. With nothing in between the
round trip is error free.
"""
import numpy as np

from genlab.signal import (QAM16, demap_qam_hard, map_qam, matched_filter_downsample,
                           prbs_generate, rrc_taps, upsample_shape)

# a short maximal-length sequence; order 7 repeats after 127 bits
bits = prbs_generate(order=7, length=127 * 2, seed=1)
print("first bits:", bits[:16])
print("period 127:", np.array_equal(bits[:127], bits[127:]))

# Gray labels: neighbours differ in exactly one bit
labels = np.array([[int(b) for b in np.binary_repr(i, 4)] for i in range(16)])
pts = QAM16.points
d = np.abs(pts[:, None] - pts[None, :])
nearest = d == np.min(d[d > 0])
flips = (labels[:, None, :] != labels[None, :, :]).sum(-1)
print("nearest neighbours differ by one bit:", bool(np.all(flips[nearest] == 1)))
print("mean energy:", np.mean(np.abs(pts) ** 2))

# shape, then filter back
sps, span = 8, 256
taps = rrc_taps(0.1, span, sps)
symbols = map_qam(prbs_generate(15, 4 * 4096, seed=3), QAM16)
fs = sps * 34.4e9
wave = upsample_shape(symbols, sps, taps, fs)
back = matched_filter_downsample(wave.values[0], sps, taps, len(symbols))
print("loopback rms error: %.2e" % np.sqrt(np.mean(np.abs(back - symbols) ** 2)))
print("bits recovered:", np.array_equal(demap_qam_hard(back, QAM16),
                                        prbs_generate(15, 4 * 4096, seed=3)))
