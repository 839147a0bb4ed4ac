import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinmfg.grid import Field, integrate, moment
from kinmfg.kolmogorov import (
    CFLError,
    OperatorConfig,
    SCHEMES,
    bernoulli,
    cfl_report,
    fp_matrix,
    heat_matrix,
    kolmogorov_covariance,
    kolmogorov_fundamental,
    point_source,
    strang_step,
    transport_step,
    v_diffusion_drift_step,
)

from conftest import gaussian, make_grid


@pytest.mark.parametrize("scheme", SCHEMES)
def test_x_independent_field_unchanged(grid16, scheme):
    V = grid16.v_components()[0]
    f = Field(grid16, np.broadcast_to(np.exp(-V**2), grid16.shape).copy())
    dt = 0.01 if scheme == "upwind1" else 0.3
    out = transport_step(f, dt, -1, OperatorConfig(scheme))
    np.testing.assert_allclose(out.values, f.values, atol=1e-13)


def test_spectral_shift_of_sine():
    g = make_grid(n=32, L_v=4.0)
    X, V = g.x_components()[0], g.v_components()[0]
    f = Field(g, np.sin(X))
    dt = math.pi / 2.0
    out = transport_step(f, dt, +1, OperatorConfig("semi_lagrangian_spectral"))
    np.testing.assert_allclose(out.values, np.sin(X - V * dt), atol=1e-12)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_transport_conserves_mass(grid16, scheme):
    f = gaussian(grid16)
    dt = 0.01 if scheme == "upwind1" else 0.2
    out = transport_step(f, dt, -1, OperatorConfig(scheme))
    assert integrate(out) == pytest.approx(integrate(f), abs=1e-12)


def test_upwind_cfl_error_names_dt(grid16):
    limit = cfl_report(grid16, 0.0, OperatorConfig("upwind1"))
    assert limit == pytest.approx(0.9 * grid16.h_x / grid16.L_v)
    with pytest.raises(CFLError, match="dt <="):
        transport_step(gaussian(grid16), 2 * limit, -1, OperatorConfig("upwind1"))


def test_cfl_report_cases(grid16):
    assert math.isinf(cfl_report(grid16, 0.0))
    assert cfl_report(grid16, 2.0) == pytest.approx(0.9 * grid16.h_v / 2.0)
    assert cfl_report(grid16, 0.0, OperatorConfig(v_diffusion=False)) == pytest.approx(0.45 * grid16.h_v**2)
    with pytest.raises(ValueError):
        cfl_report(grid16, -1.0)


def test_heat_step_adds_variance():
    g = make_grid(n=64, L_v=6.0)
    f = gaussian(g, sv=0.6)
    dt = 0.01
    out = v_diffusion_drift_step(f, dt, None, "fp")
    assert integrate(out) == pytest.approx(1.0, abs=1e-12)
    assert moment(out, "v2") - moment(f, "v2") == pytest.approx(2 * dt, rel=0.02)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), dt=st.floats(1e-3, 1.0), scale=st.floats(0.0, 20.0))
def test_fp_step_positive_and_conservative(seed, dt, scale):
    g = make_grid(n=8, d=1)
    rng = np.random.default_rng(seed)
    f = Field(g, rng.random(g.shape))
    b = scale * rng.normal(size=g.shape + (1,))
    out = strang_step(f, dt, -1, b, "fp")
    assert out.values.min() >= 0.0
    assert integrate(out) == pytest.approx(integrate(f), rel=1e-12)


def test_fp_step_rejects_negative(grid16):
    vals = np.zeros(grid16.shape)
    vals[0, 0] = -1.0
    with pytest.raises(ValueError):
        v_diffusion_drift_step(Field(grid16, vals), 0.1)


def test_hjb_step_maps_constants_and_is_monotone(rng):
    g = make_grid(n=16)
    op = OperatorConfig("semi_lagrangian")
    c = strang_step(g.constant(3.0), 0.1, +1, None, "hjb", op)
    np.testing.assert_allclose(c.values, 3.0, atol=1e-13)
    a = rng.normal(size=g.shape)
    b = a + rng.random(g.shape)
    ua = strang_step(Field(g, a), 0.1, +1, None, "hjb", op).values
    ub = strang_step(Field(g, b), 0.1, +1, None, "hjb", op).values
    assert np.all(ub >= ua - 1e-14)
    assert ua.max() <= a.max() + 1e-13 and ua.min() >= a.min() - 1e-13


def test_bernoulli_identities():
    z = np.linspace(-30, 30, 301)
    np.testing.assert_allclose(bernoulli(z) - bernoulli(-z), -z, atol=1e-12)
    assert bernoulli(np.array([0.0]))[0] == 1.0
    assert np.all(bernoulli(np.array([-800.0, 800.0])) >= 0)


def test_fp_matrix_columns_sum_to_one(rng):
    lo, di, up = fp_matrix(rng.normal(size=(3, 10)) * 5, 3, 10, 0.1, 0.3)
    # column sums of the tridiagonal matrix: diag[j] + lower[j+1] + upper[j-1]
    col = di.copy()
    col[:, :-1] += lo[:, 1:]
    col[:, 1:] += up[:, :-1]
    np.testing.assert_allclose(col, 1.0, atol=1e-13)
    lo, di, up = heat_matrix(2, 6, 0.1, 0.3)
    np.testing.assert_allclose(lo.sum(1) + di.sum(1) + up.sum(1), 6.0)


def test_fundamental_solution_moments():
    g = make_grid(n=256, L_x=6.0, L_v=6.0)
    t = 0.5
    rho = kolmogorov_fundamental(g, t)
    f = Field(g, rho)
    assert integrate(f) == pytest.approx(1.0, abs=1e-6)
    X, V = g.x_components()[0], g.v_components()[0]
    cov = kolmogorov_covariance(t)
    assert integrate(f.values * X * V, g) == pytest.approx(cov[0, 1], rel=1e-3)
    assert moment(f, "v2") == pytest.approx(2 * t, rel=1e-3)


def test_point_source_unit_mass(grid16):
    ps = point_source(grid16)
    assert integrate(ps, grid16) == pytest.approx(1.0)
    assert np.count_nonzero(ps) == 2


def test_scheme_converges_to_fundamental():
    errs = []
    for n, n_t in ((32, 50), (64, 100)):
        g = make_grid(n=n, n_t=n_t, L_x=2.0, L_v=4.5)
        f = Field(g, point_source(g))
        for _ in range(n_t):
            f = strang_step(f, g.dt, -1, None, "fp")
        errs.append(np.abs(f.values - kolmogorov_fundamental(g, g.T)).sum() * g.cell_volume)
    assert errs[1] < errs[0] / 1.8


def test_symmetric_data_stays_symmetric():
    g = make_grid(n=16)
    f = gaussian(g)  # even in (x, v) jointly
    for _ in range(5):
        f = strang_step(f, 0.05, -1, None, "fp")
    ph = g.phase(f.values)
    # (x, v) -> (-x, -v): x-node 0 sits at index n/2, v is cell-centred
    flipped = np.roll(ph[::-1, ::-1], 1, axis=0)
    np.testing.assert_allclose(flipped, ph, atol=1e-13)
