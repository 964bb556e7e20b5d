import numpy as np
import pytest

from genlab.channel import Dataset, SimSettings, generate_dataset, preset
from genlab.equalizer.model import EqualizerHyper
from genlab.signal import QAM16, DpSymbolSequence

FAST_SIM = SimSettings(sps=8, step_km=1.0, rrc_span=64)
TINY = EqualizerHyper(n_taps=7, n_filters=3, kernel_size=3, hidden_units=4)
SMALL = EqualizerHyper(n_taps=9, n_filters=8, kernel_size=3, hidden_units=12)


@pytest.fixture(scope="session")
def small_scenario():
    return preset("B").replace(sim=FAST_SIM, n_spans=1)


@pytest.fixture(scope="session")
def small_pair(small_scenario):
    """Independent train/test datasets from a short, cheap link."""
    return generate_dataset(small_scenario, 1200, 11), generate_dataset(small_scenario, 1200, 12)


def identity_dataset(n, seed=0):
    """rx == tx: the equalizer only has to learn to pass the centre tap."""
    rng = np.random.default_rng(seed)
    sym = QAM16.points[rng.integers(0, 16, (2, n))]
    seq = DpSymbolSequence(sym[0], sym[1], 34.4e9)
    return Dataset(preset("B"), seq, seq, seed)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
