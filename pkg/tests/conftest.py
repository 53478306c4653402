import numpy as np
import pytest

from streamdp.rng import RandomSource


@pytest.fixture
def rng():
    return RandomSource(20210)


def binomial_sigma(p: float, n: int) -> float:
    """Standard deviation of an empirical frequency over n trials."""
    return np.sqrt(p * (1.0 - p) / n)


def mean_sigma(var: float, n: int) -> float:
    """Standard deviation of an empirical mean over n iid draws."""
    return np.sqrt(var / n)
