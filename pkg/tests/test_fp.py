import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinmfg.fp import (
    FPProblem,
    de_giorgi_levels,
    level_schedule,
    monte_carlo_fp,
    solve_fp,
    solve_fp_full,
)
from kinmfg.grid import Field, SpaceTimeField, integrate
from kinmfg.hamiltonian import Zero
from kinmfg.hjb import HJBProblem, solve_hjb
from kinmfg.kolmogorov import OperatorConfig

from conftest import gaussian, make_grid


def _drift(grid, rng, scale):
    return SpaceTimeField(grid, scale * rng.normal(size=(grid.n_t + 1,) + grid.shape + (grid.d,)))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0, 10), scheme=st.sampled_from(["flux_limited", "semi_lagrangian"]))
def test_positive_and_mass_preserving(seed, scale, scheme):
    g = make_grid(n=8, n_t=10)
    rng = np.random.default_rng(seed)
    res = solve_fp_full(FPProblem(g, gaussian(g), _drift(g, rng, scale), OperatorConfig(scheme)))
    assert res.m.data.min() >= 0.0
    assert res.mass_error.max() <= 1e-12
    assert res.leakage == 0.0 and res.rounding_clip <= 1e-12


def test_zero_drift_even_data_stays_even():
    g = make_grid(n=16, n_t=10)
    m = solve_fp(FPProblem(g, gaussian(g)))
    ph = g.phase(m.data[-1])
    np.testing.assert_allclose(np.roll(ph[::-1, ::-1], 1, axis=0), ph, atol=1e-13)


def test_problem_validation(grid16):
    with pytest.raises(ValueError, match="unit mass"):
        FPProblem(grid16, Field(grid16, 2 * gaussian(grid16).values))
    with pytest.raises(ValueError, match="nonnegative"):
        vals = gaussian(grid16).values.copy()
        vals[0, 0] = -1e-3
        FPProblem(grid16, Field(grid16, vals))
    with pytest.raises(ValueError, match="drift"):
        FPProblem(grid16, gaussian(grid16), SpaceTimeField(grid16, np.zeros((grid16.n_t + 1,) + grid16.shape)))


@pytest.mark.parametrize("fp_scheme,tol", [("semi_lagrangian", 1e-12), ("flux_limited", 2e-2)])
def test_duality_with_backward_equation(fp_scheme, tol):
    # with H = 0 and F = 0:  d/dt int m u = 0, so int m(T) G = int m0 u(0)
    g = make_grid(n=32, n_t=20)
    X, V = g.x_components()[0], g.v_components()[0]
    G = Field(g, np.cos(X) * np.exp(-(V**2) / 4) + 0.3 * np.sin(2 * X) * V)
    F = SpaceTimeField(g, np.zeros((g.n_t + 1,) + g.shape))
    u = solve_hjb(HJBProblem(g, Zero(), F, G))
    m0 = gaussian(g, cx=0.4, cv=0.3)
    m = solve_fp(FPProblem(g, m0, None, OperatorConfig(fp_scheme)))
    lhs = integrate(m.data[-1] * G.values, g)
    rhs = integrate(m0.values * u.data[0], g)
    assert abs(lhs - rhs) <= tol * max(abs(lhs), 1e-3)


def test_level_schedules():
    np.testing.assert_allclose(level_schedule(3, "decreasing"), [4.0, 3.0, 2.5, 2.25])
    np.testing.assert_allclose(level_schedule(3, "ascending"), [1.0, 1.5, 1.75, 1.875])
    with pytest.raises(ValueError):
        level_schedule(3, "other")


def _field(g, vals):
    return SpaceTimeField(g, np.broadcast_to(vals, (g.n_t + 1,) + g.shape).copy())


def test_levels_vanish_below_two():
    g = make_grid(n=8, n_t=4)
    seq = de_giorgi_levels(_field(g, np.full(g.shape, 1.9)), K=5)
    assert np.all(seq.U == 0.0) and seq.first_zero() == 0


def test_levels_are_monotone_in_k():
    g = make_grid(n=8, n_t=4)
    rng = np.random.default_rng(3)
    seq = de_giorgi_levels(_field(g, 4 * rng.random(g.shape)), K=6, schedule="ascending")
    assert np.all(np.diff(seq.U) <= 0)
    with pytest.raises(ValueError):
        de_giorgi_levels(_field(g, -np.ones(g.shape)), K=2)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), top=st.floats(0.5, 6.0))
def test_chebyshev_step_holds_for_ascending_levels(seed, top):
    g = make_grid(n=8, n_t=3)
    rng = np.random.default_rng(seed)
    m = SpaceTimeField(g, top * rng.random((g.n_t + 1,) + g.shape))
    seq = de_giorgi_levels(m, K=6, schedule="ascending")
    assert seq.chebyshev_violations == 0 and seq.chebyshev_checked == 6 * (g.n_t + 1)


def test_chebyshev_fails_for_decreasing_levels_on_band():
    # a field sitting between two consecutive decreasing levels
    g = make_grid(n=8, n_t=2)
    seq = de_giorgi_levels(_field(g, np.full(g.shape, 2.6)), K=3, schedule="decreasing")
    assert seq.chebyshev_violations > 0


def test_monte_carlo_is_deterministic_and_warns():
    g = make_grid(n=16, n_t=10, L_v=5.0)
    prob = FPProblem(g, gaussian(g))
    with pytest.warns(UserWarning):
        a = monte_carlo_fp(prob, 2000, seed=7)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = monte_carlo_fp(prob, 2000, seed=7)
        c = monte_carlo_fp(prob, 2000, seed=8)
    np.testing.assert_array_equal(a.histogram.values, b.histogram.values)
    assert not np.array_equal(a.histogram.values, c.histogram.values)
    assert integrate(a.histogram) == pytest.approx(1.0)


def test_monte_carlo_variance_and_csv(tmp_path):
    g = make_grid(n=32, n_t=20, L_v=6.0)
    prob = FPProblem(g, gaussian(g))
    m = solve_fp(prob)
    rep = monte_carlo_fp(prob, 50_000, seed=1, m_pde=m, trajectory_csv=tmp_path / "traj.csv", n_csv=5)
    assert rep.var_v == pytest.approx(0.25 + 2 * g.T, abs=5 * rep.var_v_stderr + 0.01)
    assert rep.l1_to_pde < 0.15
    lines = (tmp_path / "traj.csv").read_text().splitlines()
    assert lines[0] == "t,x1,v1" and len(lines) == 1 + 5 * (g.n_t + 1)
    assert np.isfinite(rep.modulus_max)
