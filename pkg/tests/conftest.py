import numpy as np
import pytest

from kinmfg.grid import Field, GridConfig, build_grid, integrate


def make_grid(n=16, n_t=20, T=0.5, L_x=np.pi, L_v=4.0, d=1):
    return build_grid(GridConfig(d=d, T=T, n_t=n_t, L_x=L_x, n_x=n, L_v=L_v, n_v=n))


def gaussian(grid, sx=0.5, sv=0.5, cx=0.0, cv=0.0):
    vals = np.ones(grid.shape)
    for xk, vk in zip(grid.x_components(), grid.v_components()):
        vals = vals * np.exp(-((xk - cx) ** 2) / (2 * sx**2) - (vk - cv) ** 2 / (2 * sv**2))
    return Field(grid, vals / integrate(vals, grid))


@pytest.fixture
def grid16():
    return make_grid()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
