"""Shared fixtures: small grids and configs reused across the unit tests."""
import numpy as np
import pytest

from triscale.domain import SimConfig, build_grid


@pytest.fixture(scope="session")
def small_config():
    """Coarse config whose initial ball still covers grid cells (S enlarged)."""
    return SimConfig(nx=32, nr=8, init_support_s=6.0)


@pytest.fixture(scope="session")
def small_grid(small_config):
    return build_grid(small_config)


@pytest.fixture(scope="session")
def tiny_grid():
    """Very small grid for brute-force oracles."""
    return build_grid(SimConfig(x_min=-2.0, x_max=2.0, nx=4, nr=2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
