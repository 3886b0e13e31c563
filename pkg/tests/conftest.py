"""Shared test configuration."""

import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _no_global_numpy_seed_leakage():
    state = np.random.get_state()
    yield
    np.random.set_state(state)
