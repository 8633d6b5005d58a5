import numpy as np
import pytest

from nfpe import Field, GridSpec, ResolventConfig


@pytest.fixture
def grid64():
    return GridSpec(1, 8.0, 64)


@pytest.fixture
def grid128():
    return GridSpec(1, 8.0, 128)


@pytest.fixture
def grid2d():
    return GridSpec(2, 6.0, 16)


@pytest.fixture
def rcfg():
    return ResolventConfig()


def random_density(grid: GridSpec, rng: np.random.Generator, smooth: bool = True) -> Field:
    """Random probability density: positive mixture bumps, unit mass."""
    c = grid.axis_centers()
    if grid.d == 1:
        x = c
        vals = np.zeros(grid.shape)
        for _ in range(3):
            mu = rng.uniform(-3.0, 3.0)
            sig = rng.uniform(0.3, 1.2)
            w = rng.uniform(0.2, 1.0)
            vals += w * np.exp(-0.5 * ((x - mu) / sig) ** 2)
    else:
        X, Y = np.meshgrid(c, c, indexing="ij")
        vals = np.zeros(grid.shape)
        for _ in range(3):
            mu = rng.uniform(-2.0, 2.0, size=2)
            sig = rng.uniform(0.4, 1.0)
            w = rng.uniform(0.2, 1.0)
            vals += w * np.exp(-0.5 * (((X - mu[0]) ** 2 + (Y - mu[1]) ** 2) / sig**2))
    if not smooth:
        vals *= 1.0 + 0.3 * rng.random(grid.shape)
    vals /= vals.sum() * grid.cell_volume
    return Field(grid, vals)


def random_field(grid: GridSpec, rng: np.random.Generator, scale: float = 1.0) -> Field:
    return Field(grid, scale * rng.standard_normal(grid.shape))
