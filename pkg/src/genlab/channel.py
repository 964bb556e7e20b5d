"""
Dual-polarization fiber channel and randomized dataset generation.

Units: time in ps, distance in km, power in W, field in sqrt(W). Dispersion
is given as D in ps/(nm km) and converted to beta2 in ps^2/km.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.constants import c as C_M_PER_S
from scipy.constants import h as PLANCK

from . import rxdsp
from .signal import (ComplexSequence, DpSymbolSequence, constellation_for, map_qam,
                     matched_filter_downsample, prbs_generate, rrc_taps, upsample_shape,
                     brickwall_lowpass)

log = logging.getLogger(__name__)

C_NM_PER_PS = C_M_PER_S * 1e-3
DB_TO_NEPER = math.log(10) / 10
MANAKOV_FACTOR = 8 / 9


@dataclass(frozen=True)
class FiberParams:
    alpha: float = 0.2            # dB/km
    dispersion_D: float = 17.0    # ps/(nm km)
    gamma: float = 1.3            # 1/(W km)
    length_km: float = 50.0       # per span

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0 or self.length_km <= 0:
            raise ValueError(f"invalid fiber parameters {self}")


@dataclass(frozen=True)
class SimSettings:
    """Numerical knobs that are not physical properties of the link."""

    sps: int = 8
    step_km: float = 0.1
    rrc_span: int = 256
    prbs_order: int = 32
    bandlimit_hz: float | None = None


PAPER_SIM = SimSettings()
# coarser split-step for laptop-scale runs; output moves by ~2e-5 relative RMS
DESK_SIM = SimSettings(step_km=0.5)


@dataclass(frozen=True)
class ScenarioConfig:
    modulation: str = "QAM16"
    symbol_rate: float = 34.4e9
    launch_power_dbm: float = 9.0
    n_spans: int = 5
    fiber: FiberParams = field(default_factory=FiberParams)
    fiber_type_tag: str = "SSMF"
    roll_off: float = 0.1
    wavelength_nm: float = 1550.0
    amp_noise_figure_db: float = 4.5
    transceiver_snr_db: float | None = None
    seed: int = 0
    sim: SimSettings = field(default_factory=SimSettings)

    def __post_init__(self):
        if self.n_spans < 1:
            raise ValueError("n_spans must be >= 1")
        if self.symbol_rate <= 0:
            raise ValueError("symbol_rate must be positive")
        if not 1260 <= self.wavelength_nm <= 1675:
            raise ValueError(f"wavelength {self.wavelength_nm} nm outside 1260-1675 nm")
        constellation_for(self.modulation)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "fiber" in d:
            d["fiber"] = FiberParams(**d["fiber"])
        if "sim" in d:
            d["sim"] = SimSettings(**d["sim"])
        return cls(**d)

    @property
    def total_length_km(self) -> float:
        return self.n_spans * self.fiber.length_km

    @property
    def total_dispersion(self) -> float:
        """Accumulated dispersion in ps/nm."""
        return self.fiber.dispersion_D * self.total_length_km


@dataclass(frozen=True)
class ParameterRanges:
    alpha_range: tuple[float, float]
    dispersion_range: tuple[float, float]
    gamma_range: tuple[float, float]

    def __post_init__(self):
        for name in ("alpha_range", "dispersion_range", "gamma_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min {lo} > max {hi}")

    def items(self):
        return {"alpha": self.alpha_range, "dispersion_D": self.dispersion_range,
                "gamma": self.gamma_range}.items()

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterRanges":
        return cls(**{k: tuple(v) for k, v in d.items()})


SSMF_RANGES = ParameterRanges((0.19, 0.22), (16.5, 17.5), (1.1, 1.5))
TWC_RANGES = ParameterRanges((0.2, 0.25), (2.5, 3.5), (2.0, 3.0))
FIBER_RANGES = {"SSMF": SSMF_RANGES, "TWC": TWC_RANGES}


def _midpoint_fiber(ranges: ParameterRanges, length_km: float) -> FiberParams:
    return FiberParams(**{k: (lo + hi) / 2 for k, (lo, hi) in ranges.items()}, length_km=length_km)


PRESETS = {
    "A": ScenarioConfig(modulation="QAM64", symbol_rate=28e9, launch_power_dbm=7.0, n_spans=4,
                        fiber=_midpoint_fiber(SSMF_RANGES, 100.0), fiber_type_tag="SSMF"),
    "B": ScenarioConfig(modulation="QAM16", symbol_rate=34.4e9, launch_power_dbm=9.0, n_spans=5,
                        fiber=_midpoint_fiber(SSMF_RANGES, 50.0), fiber_type_tag="SSMF"),
    "C": ScenarioConfig(modulation="QAM16", symbol_rate=34.4e9, launch_power_dbm=3.0, n_spans=9,
                        fiber=_midpoint_fiber(TWC_RANGES, 50.0), fiber_type_tag="TWC"),
}

# How far beyond the randomization range the emulated "real" link sits, in
# half-widths of the range (1.0 would be exactly on the edge).
GAP_OFFSET = 1.4
DEFAULT_TRANSCEIVER_SNR_DB = 26.0


def preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def reality_gap_scenario(base: ScenarioConfig, ranges: ParameterRanges | None = None,
                         offset: float = GAP_OFFSET,
                         transceiver_snr_db: float = DEFAULT_TRANSCEIVER_SNR_DB) -> ScenarioConfig:
    """Stand-in for a deployed link: fiber parameters just above every
    randomization range plus transceiver noise."""
    ranges = ranges or FIBER_RANGES[base.fiber_type_tag]
    values = {k: (lo + hi) / 2 + offset * (hi - lo) / 2 for k, (lo, hi) in ranges.items()}
    fiber = dataclasses.replace(base.fiber, **values)
    return base.replace(fiber=fiber, transceiver_snr_db=transceiver_snr_db)


def derive_beta2(dispersion_D: float, wavelength_nm: float = 1550.0) -> float:
    """Group-velocity dispersion beta2 in ps^2/km from D in ps/(nm km)."""
    return -dispersion_D * wavelength_nm**2 / (2 * np.pi * C_NM_PER_PS)


def angular_frequency(n: int, sample_rate: float) -> np.ndarray:
    """FFT-ordered angular frequency grid in rad/ps."""
    return 2 * np.pi * np.fft.fftfreq(n, 1e12 / sample_rate)


def linear_operator(fiber: FiberParams, wavelength_nm: float, omega: np.ndarray,
                    length_km: float) -> np.ndarray:
    """Frequency response of dispersion plus loss over ``length_km``."""
    beta2 = derive_beta2(fiber.dispersion_D, wavelength_nm)
    alpha = fiber.alpha * DB_TO_NEPER
    return np.exp((0.5j * beta2 * omega**2 - alpha / 2) * length_km)


def ssfm_propagate(waveform: ComplexSequence, fiber: FiberParams, step_km: float = 0.1,
                   wavelength_nm: float = 1550.0, length_km: float | None = None) -> ComplexSequence:
    """Symmetric split-step solution of the Manakov equation over one fiber.

    ``waveform.values`` has one row per polarization. The signal is treated
    as periodic over the sample window. The step is shrunk so an integer
    number of steps covers the length exactly.
    """
    length = fiber.length_km if length_km is None else length_km
    if step_km <= 0:
        raise ValueError("step_km must be positive")
    if step_km > length:
        raise ValueError(f"step {step_km} km exceeds fiber length {length} km")
    field_ = np.atleast_2d(np.asarray(waveform.values, dtype=complex))
    n_steps = max(1, math.ceil(length / step_km - 1e-9))
    h = length / n_steps
    omega = angular_frequency(field_.shape[1], waveform.sample_rate)
    half = linear_operator(fiber, wavelength_nm, omega, h / 2)
    full = half * half
    nl = MANAKOV_FACTOR * fiber.gamma * h

    a = sfft.ifft(half * sfft.fft(field_, axis=1), axis=1)
    for k in range(n_steps):
        if nl:
            power = np.sum(a.real**2 + a.imag**2, axis=0)
            a = a * np.exp(1j * nl * power)
        op = full if k < n_steps - 1 else half
        a = sfft.ifft(op * sfft.fft(a, axis=1), axis=1)
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite field after SSFM over {length} km "
                                 f"(step {h} km, gamma {fiber.gamma})")
    return ComplexSequence(a, waveform.sample_rate)


def ase_variance(gain_db: float, noise_figure_db: float, sample_rate: float,
                 wavelength_nm: float = 1550.0) -> float:
    """Per-polarization ASE variance (W) over the simulation bandwidth."""
    if noise_figure_db < 0:
        raise ValueError("noise figure below 0 dB is unphysical")
    g = 10 ** (gain_db / 10)
    f = 10 ** (noise_figure_db / 10)
    nu = C_M_PER_S / (wavelength_nm * 1e-9)
    return (g - 1) * f * PLANCK * nu / 2 * sample_rate


def complex_noise(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    sigma = np.sqrt(variance / 2)
    return sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def edfa_amplify(waveform: ComplexSequence, gain_db: float, noise_figure_db: float,
                 rng: np.random.Generator, wavelength_nm: float = 1550.0) -> ComplexSequence:
    if gain_db < 0:
        raise ValueError("EDFA gain must be >= 0 dB")
    var = ase_variance(gain_db, noise_figure_db, waveform.sample_rate, wavelength_nm)
    out = waveform.values * 10 ** (gain_db / 20)
    if var > 0:
        out = out + complex_noise(rng, out.shape, var)
    return ComplexSequence(out, waveform.sample_rate)


def dbm_to_watt(p_dbm: float) -> float:
    return 1e-3 * 10 ** (p_dbm / 10)


def shaping_taps(scenario: ScenarioConfig) -> np.ndarray:
    return rrc_taps(scenario.roll_off, scenario.sim.rrc_span, scenario.sim.sps)


def transmit(scenario: ScenarioConfig, symbols: DpSymbolSequence,
             rng: np.random.Generator) -> ComplexSequence:
    """Shape, launch, propagate over the amplified span chain and add
    transceiver noise. Returns the received dual-pol waveform at ``sps``
    samples per symbol, same length as the shaped waveform (full
    convolution), zero-padded internally to an FFT-friendly size."""
    sim = scenario.sim
    fs = sim.sps * scenario.symbol_rate
    taps = shaping_taps(scenario)
    shaped = upsample_shape(symbols.stacked(), sim.sps, taps, fs).values
    if sim.bandlimit_hz:
        shaped = brickwall_lowpass(shaped, fs, sim.bandlimit_hz)
    n_wave = shaped.shape[1]
    delay = (len(taps) - 1) // 2
    body = shaped[:, delay:delay + len(symbols) * sim.sps]
    shaped = shaped * np.sqrt(dbm_to_watt(scenario.launch_power_dbm)
                              / np.sum(np.mean(np.abs(body) ** 2, axis=1)))
    n_fft = sfft.next_fast_len(n_wave)
    wave = ComplexSequence(np.pad(shaped, ((0, 0), (0, n_fft - n_wave))), fs)

    span_loss_db = scenario.fiber.alpha * scenario.fiber.length_km
    for span in range(scenario.n_spans):
        wave = ssfm_propagate(wave, scenario.fiber, sim.step_km, scenario.wavelength_nm)
        wave = edfa_amplify(wave, span_loss_db, scenario.amp_noise_figure_db, rng,
                            scenario.wavelength_nm)
        log.debug("span %d/%d done", span + 1, scenario.n_spans)

    values = wave.values[:, :n_wave]
    if scenario.transceiver_snr_db is not None:
        # SNR referred to the symbol-rate bandwidth seen after the matched filter
        p_pol = dbm_to_watt(scenario.launch_power_dbm) / 2
        var = p_pol * sim.sps / 10 ** (scenario.transceiver_snr_db / 10)
        values = values + complex_noise(rng, values.shape, var)
    return ComplexSequence(values, fs)


def sample_scenario(base: ScenarioConfig, ranges: ParameterRanges,
                    rng: np.random.Generator) -> ScenarioConfig:
    draws = {k: float(rng.uniform(lo, hi)) if hi > lo else float(lo) for k, (lo, hi) in ranges.items()}
    return base.replace(fiber=dataclasses.replace(base.fiber, **draws))


@dataclass(frozen=True)
class Dataset:
    """Aligned transmitted/received symbols after receiver DSP."""

    scenario: ScenarioConfig
    tx: DpSymbolSequence
    rx: DpSymbolSequence
    seed: int

    def __post_init__(self):
        if len(self.tx) != len(self.rx):
            raise ValueError("tx and rx must be aligned one-to-one")

    @property
    def n_symbols(self) -> int:
        return len(self.tx)

    def payload(self) -> bytes:
        rec = np.empty((self.n_symbols, 8), dtype="<f8")
        for col, arr in enumerate((self.tx.h, self.tx.v, self.rx.h, self.rx.v)):
            rec[:, 2 * col] = arr.real
            rec[:, 2 * col + 1] = arr.imag
        return rec.tobytes()

    @property
    def content_hash(self) -> str:
        return hashlib.sha256(self.payload()).hexdigest()

    @property
    def constellation(self):
        return constellation_for(self.scenario.modulation)


def prbs_seed(seed: int) -> int:
    """Spread dataset seeds over the LFSR cycle; consecutive raw register
    states would only shift the same sequence by a few bits."""
    return int(np.random.SeedSequence([seed, 0x5052]).generate_state(1)[0])


def generate_dataset(scenario: ScenarioConfig, n_symbols: int, seed: int) -> Dataset:
    """PRBS -> QAM -> link -> CDC, matched filter, gain/phase normalization."""
    if n_symbols < 25:
        raise ValueError("need at least 25 symbols (one equalizer window)")
    const = constellation_for(scenario.modulation)
    k = const.bits_per_symbol
    bits = prbs_generate(scenario.sim.prbs_order, 2 * n_symbols * k, prbs_seed(seed))
    sym = map_qam(bits, const).reshape(2, n_symbols)
    tx = DpSymbolSequence(sym[0], sym[1], scenario.symbol_rate)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4E4F]))
    received = transmit(scenario, tx, rng)
    compensated = rxdsp.cdc_compensate(received, scenario.total_dispersion, scenario.wavelength_nm)
    rx = matched_filter_downsample(compensated.values, scenario.sim.sps, shaping_taps(scenario),
                                   n_symbols)
    rx = rxdsp.normalize_gain_phase(rx, sym)
    return Dataset(scenario=scenario.replace(seed=seed), tx=tx,
                   rx=DpSymbolSequence(rx[0], rx[1], scenario.symbol_rate), seed=seed)


def derive_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _library_member(args) -> Dataset:
    base, ranges, n_symbols, ds_seed = args
    scenario = sample_scenario(base, ranges, np.random.default_rng(ds_seed))
    return generate_dataset(scenario, n_symbols, ds_seed)


def build_randomized_library(base: ScenarioConfig, ranges: ParameterRanges, n_datasets: int = 20,
                             n_symbols: int = 2**14, seed: int = 0, jobs: int = 1) -> list[Dataset]:
    """Domain-randomized synthetic datasets, one fiber draw per dataset."""
    if n_datasets < 1:
        raise ValueError("n_datasets must be >= 1")
    tasks = [(base, ranges, n_symbols, s) for s in derive_seeds(seed, n_datasets)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_library_member, tasks))
    return [_library_member(t) for t in tasks]


def scenario_json(scenario: ScenarioConfig) -> str:
    return json.dumps(scenario.to_dict(), sort_keys=True)
