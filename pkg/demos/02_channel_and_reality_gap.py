"""
Fiber channel and the reality gap
=================================

A dual-polarization 16-QAM signal is sent over the 5 x 50 km SSMF link of
setup B. The synthetic library draws alpha, D and gamma inside the SSMF
ranges; the stand-in for the lab link sits outside them and adds
transceiver noise. The received clouds differ in shape, which is what the
equalizer has to bridge.
"""
import numpy as np

from genlab.channel import (DESK_SIM, SSMF_RANGES, generate_dataset, preset, reality_gap_scenario,
                            sample_scenario)
from genlab.rxdsp import empirical_pdf, mi_lower_bound, total_variation

base = preset("B").replace(sim=DESK_SIM)
print("setup B:", base.n_spans, "x", base.fiber.length_km, "km,", base.launch_power_dbm, "dBm,",
      base.symbol_rate / 1e9, "GBd", base.modulation)

# one synthetic draw from the randomization ranges
synthetic = sample_scenario(base, SSMF_RANGES, np.random.default_rng(0))
gap = reality_gap_scenario(base)
for name, sc in [("synthetic", synthetic), ("gap target", gap)]:
    f = sc.fiber
    print(f"{name:>10}: alpha {f.alpha:.3f} dB/km  D {f.dispersion_D:.2f} ps/nm/km  "
          f"gamma {f.gamma:.2f} 1/W/km  transceiver SNR {sc.transceiver_snr_db}")

# a few thousand symbols are enough to see the difference
n = 2**12
syn = generate_dataset(synthetic, n, seed=1)
tgt = generate_dataset(gap, n, seed=2)
for name, ds in [("synthetic", syn), ("gap target", tgt)]:
    mi = mi_lower_bound(ds.rx.stacked(), ds.tx.stacked(), ds.constellation)
    print(f"{name:>10}: MI without equalizer {mi:.3f} bits/symbol")

grid = (-1.6, 1.6, 64)
p_syn = empirical_pdf(syn.rx, grid)
p_tgt = empirical_pdf(tgt.rx, grid)
print("total variation between received PDFs: %.3f" % total_variation(p_syn, p_tgt))
# p_syn.to_csv("pdf_synthetic.csv") writes the 2-D histogram for plotting
