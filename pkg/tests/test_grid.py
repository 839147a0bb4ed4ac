import math

import numpy as np
import pytest

from kinmfg.grid import (
    Field,
    GridConfig,
    GridError,
    SpaceTimeField,
    boundary_mass,
    build_grid,
    entropy_density,
    fractional_seminorm,
    integrate,
    integrate_spacetime,
    lp_norm,
    moment,
    read_checkpoint,
    sup_in_time,
    write_checkpoint,
    write_csv,
)

from conftest import gaussian, make_grid


def test_build_grid_validates():
    with pytest.raises(GridError, match="n_x must be power of two >= 4"):
        build_grid(GridConfig(n_x=3))
    with pytest.raises(GridError, match="n_x must be power of two"):
        build_grid(GridConfig(n_x=24))
    with pytest.raises(GridError):
        build_grid(GridConfig(n_v=2))
    with pytest.raises(GridError, match="budget"):
        build_grid(GridConfig(d=2, n_x=64, n_v=64, max_cells=1000))


def test_geometry(grid16):
    g = grid16
    assert g.shape == (16, 16) and g.phase_shape == (16, 16)
    assert math.isclose(g.h_x, 2 * math.pi / 16)
    assert math.isclose(g.v[0], -g.L_v + g.h_v / 2) and math.isclose(g.v[-1], g.L_v - g.h_v / 2)
    assert math.isclose(g.time_weights().sum(), g.T)
    g2 = make_grid(n=8, d=2)
    assert g2.shape == (64, 64) and g2.phase_shape == (8, 8, 8, 8)


def test_field_is_immutable_and_finite(grid16):
    f = grid16.constant(2.0)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0
    with pytest.raises(GridError):
        Field(grid16, np.full(grid16.shape, np.nan))
    with pytest.raises(GridError):
        Field(grid16, np.zeros((3, 3)))


def test_integrate_constant_is_volume(grid16):
    assert math.isclose(integrate(grid16.constant(1.0)), grid16.volume, rel_tol=1e-13)
    st = SpaceTimeField(grid16, np.ones((grid16.n_t + 1,) + grid16.shape))
    assert math.isclose(integrate_spacetime(st), grid16.volume * grid16.T, rel_tol=1e-13)


def test_moments_of_gaussian():
    g = make_grid(n=128, L_v=6.0)
    f = gaussian(g, sx=0.5, sv=0.7)
    assert math.isclose(moment(f, "x2"), 0.25, rel_tol=1e-3)
    assert math.isclose(moment(f, "v2"), 0.49, rel_tol=1e-3)
    assert math.isclose(moment(f, "v4"), 3 * 0.49**2, rel_tol=2e-3)
    # entropy of a product Gaussian: -log(2 pi e sx sv)
    assert math.isclose(moment(f, "entropy"), -math.log(2 * math.pi * math.e * 0.35), rel_tol=2e-3)
    with pytest.raises(ValueError):
        moment(f, "x3")


def test_entropy_density_handles_zero_and_rejects_negative():
    np.testing.assert_array_equal(entropy_density(np.array([0.0, 1.0])), [0.0, 0.0])
    with pytest.raises(ValueError):
        entropy_density(np.array([-1.0]))


def test_lp_norms(grid16):
    f = grid16.constant(3.0)
    assert math.isclose(lp_norm(f, 2), 3.0 * math.sqrt(grid16.volume), rel_tol=1e-13)
    assert lp_norm(f, math.inf) == 3.0
    vec = Field(grid16, np.stack([np.full(grid16.shape, 3.0), np.full(grid16.shape, 4.0)], axis=-1))
    assert lp_norm(vec, math.inf) == 5.0
    st = SpaceTimeField.from_slices(grid16, [grid16.constant(k) for k in range(grid16.n_t + 1)])
    assert sup_in_time(st, math.inf) == grid16.n_t
    with pytest.raises(ValueError):
        lp_norm(f, 0.5)


@pytest.mark.parametrize("k", [1, 3])
def test_fractional_seminorm_of_mode(k):
    g = make_grid(n=32, L_v=4.0)
    X = g.x_components()[0]
    f = Field(g, np.sin(k * X))
    s = 1.0 / 3.0
    # |D|^s sin(kx) = k^s sin(kx); its L2 norm is k^s ||sin(kx)||_2
    expected = k**s * lp_norm(f, 2)
    assert math.isclose(fractional_seminorm(f, s, "x"), expected, rel_tol=1e-10)


def test_fractional_seminorm_time_of_constant_is_zero(grid16):
    st = SpaceTimeField(grid16, np.ones((grid16.n_t + 1,) + grid16.shape))
    assert fractional_seminorm(st, 0.5, "t") < 1e-10
    with pytest.raises(ValueError):
        fractional_seminorm(st, 1.5, "x")


def test_boundary_mass(grid16):
    vals = np.zeros(grid16.shape)
    vals[:, 0] = 1.0
    assert math.isclose(boundary_mass(Field(grid16, vals)), 16 * grid16.cell_volume)
    assert boundary_mass(gaussian(grid16, sv=0.3)) < 1e-10


def test_checkpoint_roundtrip(tmp_path, grid16, rng):
    f = Field(grid16, rng.random(grid16.shape))
    write_checkpoint(tmp_path / "f.kmfg", f)
    raw = (tmp_path / "f.kmfg").read_bytes()
    assert raw[:5] == b"KMFG1"
    back = read_checkpoint(tmp_path / "f.kmfg")
    np.testing.assert_array_equal(back.values, f.values)
    st = SpaceTimeField(grid16, rng.random((grid16.n_t + 1,) + grid16.shape))
    write_checkpoint(tmp_path / "s.kmfg", st)
    back = read_checkpoint(tmp_path / "s.kmfg", T=grid16.T)
    np.testing.assert_array_equal(back.data, st.data)
    assert back.grid == grid16
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(GridError):
        read_checkpoint(tmp_path / "bad")


def test_csv_columns(tmp_path):
    g = make_grid(n=4, d=2)
    write_csv(tmp_path / "f.csv", g.constant(1.0))
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,v1,v2,value" and len(lines) == 1 + g.n_cells
