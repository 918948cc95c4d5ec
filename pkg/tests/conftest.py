import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from engine.settings import reset_settings, set_threads  # noqa: E402
from engine.spectral_field import GridSpec, SpectralField  # noqa: E402
from engine.symbol_engine import heat_family  # noqa: E402


@pytest.fixture(autouse=True)
def single_thread():
    set_threads(1)
    yield
    set_threads(1)
    reset_settings()


@pytest.fixture
def line_grid():
    return GridSpec(n=1, L=8.0, N=64)


@pytest.fixture
def heat_line():
    return heat_family(1, 1.0)


@pytest.fixture
def bump(line_grid):
    return SpectralField.gaussian(line_grid, [0.5], 1.0, normalized=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
