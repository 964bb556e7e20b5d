"""Synthetic-data calibration of neural equalizers for coherent optical links.

Submodules: :mod:`genlab.signal` (TX/RX primitives), :mod:`genlab.channel`
(fiber link and randomized datasets), :mod:`genlab.rxdsp` (linear DSP and
metrics), :mod:`genlab.equalizer` (CNN+biLSTM model and training),
:mod:`genlab.pipeline` (model library and calibration experiment),
:mod:`genlab.io` (file formats) and :mod:`genlab.cli`.
"""

__version__ = "0.1.0"
