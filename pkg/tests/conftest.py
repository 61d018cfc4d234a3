import numpy as np
import pytest

import synthetic
from classes.waveform import Waveform, SAMPLE_RATE_HZ


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run training-trend tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope='session')
def toy_corpus():
    """Four synthetic speakers with five one-second utterances each."""
    return synthetic.make_speaker_corpus(4, 5, seconds=1.0, seed=7)


@pytest.fixture
def sine():
    def make(freq_hz: float, seconds: float = 1.0, amplitude: float = 1.0) -> Waveform:
        t = np.arange(int(seconds * SAMPLE_RATE_HZ)) / SAMPLE_RATE_HZ
        return Waveform(amplitude * np.sin(2 * np.pi * freq_hz * t))
    return make
