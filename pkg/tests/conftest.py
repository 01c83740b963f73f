import os

import numpy as np
import pytest

from bdsampler.grids import GridDensity
from bdsampler.kernels import KernelSpec
from bdsampler.targets import gmm_benchmark_target, torus_bimodal_target

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def benchmark_mixture():
    return gmm_benchmark_target()


@pytest.fixture(scope="session")
def bimodal_target_256():
    return torus_bimodal_target(256)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_grid_density(rng, n=128, period=2.0 * np.pi, roughness=1.0):
    """Strictly positive random probability density on the torus grid."""
    x = np.arange(n) * period / n
    k = rng.integers(1, 6, size=3)
    amps = roughness * rng.uniform(-1.0, 1.0, size=3)
    vals = np.exp(sum(a * np.sin(kk * x + rng.uniform(0, period))
                      for a, kk in zip(amps, k)))
    vals /= (period / n) * vals.sum()
    return GridDensity(vals, period)


@pytest.fixture()
def make_density(rng):
    def _make(n=128, roughness=1.0):
        return random_grid_density(rng, n=n, roughness=roughness)

    return _make


@pytest.fixture(scope="session")
def unit_kernel_2d():
    return KernelSpec(1.0, 2)
