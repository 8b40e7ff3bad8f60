import numpy as np
import pytest

from s2pnet import build_polar_grid, gen_dataset


@pytest.fixture(scope="session")
def grid():
    return build_polar_grid()


@pytest.fixture(scope="session")
def small_dataset():
    """Balanced 4-class synthetic set, 5 images per class."""
    return gen_dataset(per_class=5, seed=7)


def naive_dft_mag(x: np.ndarray) -> np.ndarray:
    """O(N^2) reference DFT magnitude for the first N/2+1 bins."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    k = np.arange(n // 2 + 1)
    nn = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(k, nn) / n)
    return np.abs(x @ basis.T)
