import numpy as np
import pytest


@pytest.fixture
def rng():
    """Fresh seeded generator per test."""
    return np.random.default_rng(20240628)
