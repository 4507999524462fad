"""Pytest configuration and fixtures.

Configuration objects come from Factory Boy factories in tests/factories.py:

    from tests.factories import NetworkConfigFactory, RunConfigFactory

    cfg = NetworkConfigFactory()                  # small continuous SO(2) net
    cfg = NetworkConfigFactory(c4=True)           # fully sampled C4
    run = RunConfigFactory(learnable=True, out_dir=str(tmp_path))
"""
import numpy as np
import pytest
from click.testing import CliRunner
from scipy.ndimage import gaussian_filter

from partequiv.models import build_network
from partequiv.services.dataset_service import write_idx
from tests.factories import NetworkConfigFactory


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch):
    """Keep PARTEQUIV_* settings of the developer shell out of the tests."""
    for name in ('PARTEQUIV_DATA_DIR', 'PARTEQUIV_CONFIG', 'PARTEQUIV_LOG_LEVEL'):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def runner():
    """Click test runner."""
    return CliRunner()


def random_digits(rng, n, size=28):
    """Blob images quantised to 8 bits, so IDX round-trips are exact."""
    images = np.zeros((n, 1, size, size), dtype=np.float32)
    for i in range(n):
        r, c = rng.integers(6, size - 6, size=2)
        images[i, 0, r - 4:r + 4, c - 3:c + 3] = rng.integers(1, 256, size=(8, 6)) / 255.0
    return images


@pytest.fixture
def idx_dir(tmp_path, rng):
    """A data directory with tiny MNIST-style IDX files; half of the labels are 6."""
    n = 40
    labels = np.where(np.arange(n) % 2 == 0, 6, np.arange(n) % 10).astype(np.int64)
    write_idx(tmp_path / 'train-images-idx3-ubyte', random_digits(rng, n))
    write_idx(tmp_path / 'train-labels-idx1-ubyte', labels)
    write_idx(tmp_path / 't10k-images-idx3-ubyte', random_digits(rng, 10))
    write_idx(tmp_path / 't10k-labels-idx1-ubyte', np.arange(10, dtype=np.int64))
    return tmp_path


@pytest.fixture
def c4_network(rng):
    """Untrained network with a frozen, fully sampled C4 fiber."""
    return build_network(NetworkConfigFactory(c4=True, pooling=('block',)), rng).eval()


def disk_image(rng, size, radius, channels=1, sigma=1.5):
    """Smooth random image zeroed outside a centred disk."""
    planes = [gaussian_filter(rng.standard_normal((size, size)), sigma) for _ in range(channels)]
    centre = (size - 1) / 2.0
    rows, cols = np.mgrid[:size, :size]
    mask = (rows - centre) ** 2 + (cols - centre) ** 2 <= radius ** 2
    return (np.stack(planes) * mask).astype(np.float32)
