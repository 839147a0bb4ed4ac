"""Local couplings F(t, x, v, m) and terminal costs G(x, v, m).

Callables take broadcastable numpy arrays: ``t`` a scalar, ``x`` and ``v``
lists of d component arrays (as produced by ``PhaseGrid.x_components``), and
``m`` the density values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Field, PhaseGrid, SpaceTimeField

Coupler = Callable[..., np.ndarray]


def _sq(components) -> np.ndarray:
    return sum(np.asarray(c) ** 2 for c in components)


@dataclass(frozen=True)
class CouplingSpec:
    name: str
    F: Coupler
    G: Coupler
    F_m: Coupler
    G_m: Coupler
    c0: float
    envelope_mode: str = "ratio"  # or "l1"
    strict: bool = True
    params: dict = field(default_factory=dict)

    def eval_F(self, t, x, v, m) -> np.ndarray:
        m = np.asarray(m, dtype=np.float64)
        if np.any(m < 0):
            raise ValueError("densities must be nonnegative")
        return np.asarray(self.F(t, x, v, m), dtype=np.float64) * np.ones_like(m)

    def eval_G(self, x, v, m) -> np.ndarray:
        m = np.asarray(m, dtype=np.float64)
        if np.any(m < 0):
            raise ValueError("densities must be nonnegative")
        return np.asarray(self.G(x, v, m), dtype=np.float64) * np.ones_like(m)

    def to_config(self) -> dict:
        return {"name": self.name, "c0": self.c0, **self.params}

    # grid helpers -------------------------------------------------------
    def F_on_grid(self, mu: SpaceTimeField) -> SpaceTimeField:
        grid = mu.grid
        xs, vs = grid.x_components(), grid.v_components()
        data = np.stack(
            [self.eval_F(t, xs, vs, np.maximum(level, 0.0)) for t, level in zip(grid.times, mu.data)]
        )
        return SpaceTimeField(grid, data)

    def G_on_grid(self, mu_T: Field) -> Field:
        grid = mu_T.grid
        return Field(grid, self.eval_G(grid.x_components(), grid.v_components(), np.maximum(mu_T.values, 0.0)))


def linear(strength: float = 1.0, c0: float | None = None) -> CouplingSpec:
    """F = G = strength * m (ratio-envelope branch)."""
    k = float(strength)
    return CouplingSpec(
        name="linear",
        F=lambda t, x, v, m: k * m,
        G=lambda x, v, m: k * m,
        F_m=lambda t, x, v, m: np.full_like(np.asarray(m, dtype=float), k),
        G_m=lambda x, v, m: np.full_like(np.asarray(m, dtype=float), k),
        c0=k if c0 is None else c0,
        envelope_mode="ratio",
        params={"strength": k},
    )


def bump_quadratic(strength: float = 1.0, width: float = 1.0, c0: float | None = None) -> CouplingSpec:
    """F = G = strength * phi(x, v) (m + m^2) with a Gaussian bump phi (L1-envelope branch)."""
    k = float(strength)
    w2 = float(width) ** 2

    def phi(x, v):
        return np.exp(-(_sq(x) + _sq(v)) / (2.0 * w2))

    return CouplingSpec(
        name="bump_quadratic",
        F=lambda t, x, v, m: k * phi(x, v) * (m + m**2),
        G=lambda x, v, m: k * phi(x, v) * (m + m**2),
        F_m=lambda t, x, v, m: k * phi(x, v) * (1.0 + 2.0 * m),
        G_m=lambda x, v, m: k * phi(x, v) * (1.0 + 2.0 * m),
        c0=0.0 if c0 is None else c0,
        envelope_mode="l1",
        params={"strength": k, "width": float(width)},
    )


def zero() -> CouplingSpec:
    """F = G = 0; decouples the system (not strictly monotone)."""
    return CouplingSpec(
        name="zero",
        F=lambda t, x, v, m: np.zeros_like(m),
        G=lambda x, v, m: np.zeros_like(m),
        F_m=lambda t, x, v, m: np.zeros_like(m),
        G_m=lambda x, v, m: np.zeros_like(m),
        c0=0.0,
        strict=False,
    )


def from_callables(name, F, G, c0=0.0, envelope_mode="ratio", F_m=None, G_m=None) -> CouplingSpec:
    """Wrap user callables of m only (x, v, t ignored); derivatives by finite differences if absent."""
    h = 1e-6

    def fd(fun):
        return lambda *args: (fun(*args[:-1], args[-1] + h) - fun(*args[:-1], np.maximum(args[-1] - h, 0.0))) / (
            args[-1] + h - np.maximum(args[-1] - h, 0.0)
        )

    F_full = lambda t, x, v, m: F(m)  # noqa: E731
    G_full = lambda x, v, m: G(m)  # noqa: E731
    return CouplingSpec(
        name=name,
        F=F_full,
        G=G_full,
        F_m=F_m or fd(F_full),
        G_m=G_m or fd(G_full),
        c0=c0,
        envelope_mode=envelope_mode,
    )


BUILTIN = {"linear": linear, "bump_quadratic": bump_quadratic, "zero": zero}


def from_config(cfg: dict) -> CouplingSpec:
    cfg = dict(cfg)
    name = cfg.pop("name", "linear")
    if name not in BUILTIN:
        raise ValueError(f"unknown coupling {name!r}")
    return BUILTIN[name](**cfg)


# --------------------------------------------------------------------------
# certificates
# --------------------------------------------------------------------------
@dataclass
class MonotoneReport:
    min_slope_F: float
    min_slope_G: float
    argmin_F: float
    c0: float
    tol: float

    @property
    def passed(self) -> bool:
        return min(self.min_slope_F, self.min_slope_G) >= self.c0 - self.tol


def _sample_points(n_points: int, d: int, rng: np.random.Generator, box: float = 2.0):
    t = rng.uniform(0.0, 1.0, n_points)
    x = [rng.uniform(-box, box, n_points) for _ in range(d)]
    v = [rng.uniform(-box, box, n_points) for _ in range(d)]
    return t, x, v


def monotone_check(
    spec: CouplingSpec,
    m_max: float,
    n_samples: int = 1024,
    n_points: int = 16,
    d: int = 1,
    tol: float = 1e-9,
    seed: int = 0,
) -> MonotoneReport:
    """Worst finite-difference slope of F and G in m over [0, m_max]."""
    if not m_max > 0:
        raise ValueError("m_max must be positive")
    rng = np.random.default_rng(seed)
    t, x, v = _sample_points(n_points, d, rng)
    m = np.linspace(0.0, m_max, n_samples)
    dm = np.diff(m)
    worst_F = worst_G = np.inf
    arg = 0.0
    for i in range(n_points):
        xi = [c[i] for c in x]
        vi = [c[i] for c in v]
        Fv = spec.eval_F(t[i], xi, vi, m)
        Gv = spec.eval_G(xi, vi, m)
        sF = np.diff(Fv) / dm
        sG = np.diff(Gv) / dm
        j = int(np.argmin(sF))
        if sF[j] < worst_F:
            worst_F = float(sF[j])
            arg = float(0.5 * (m[j] + m[j + 1]))
        worst_G = min(worst_G, float(sG.min()))
    return MonotoneReport(worst_F, worst_G, arg, spec.c0, tol)


def envelope_samples(L: float, n: int = 1024) -> np.ndarray:
    """Dense m-grid on [0, L], log-spaced near 0, always containing 0 and L."""
    tail = np.geomspace(L * 1e-8, L, n - 1)
    return np.concatenate([[0.0], tail])


@dataclass
class EnvelopeResult:
    f_L: SpaceTimeField | np.ndarray
    g_L: Field | np.ndarray
    mode: str
    violations: int
    n_checked: int


def envelope(
    spec: CouplingSpec,
    L: float,
    grid: PhaseGrid | None = None,
    mode: str | None = None,
    n_checks: int = 10_000,
    seed: int = 0,
) -> EnvelopeResult:
    """Sampled envelopes f_L, g_L and a randomized check of the envelope inequality.

    ``mode="l1"``: f_L = sup_{[0,L]} F and F <= f_L + (m/L) F.
    ``mode="ratio"``: f_L = sup_{(0,L]} F/m and F <= f_L m + (m/L) F.
    """
    if not L > 0:
        raise ValueError("L must be positive")
    mode = mode or spec.envelope_mode
    ms = envelope_samples(L)

    def env_F(t, x, v):
        vals = np.stack([spec.eval_F(t, x, v, np.full(np.shape(x[0]), mm)) for mm in ms])
        if mode == "ratio":
            return (vals[1:] / ms[1:].reshape((-1,) + (1,) * (vals.ndim - 1))).max(axis=0)
        return vals.max(axis=0)

    def env_G(x, v):
        vals = np.stack([spec.eval_G(x, v, np.full(np.shape(x[0]), mm)) for mm in ms])
        if mode == "ratio":
            return (vals[1:] / ms[1:].reshape((-1,) + (1,) * (vals.ndim - 1))).max(axis=0)
        return vals.max(axis=0)

    if grid is not None:
        xs, vs = grid.x_components(), grid.v_components()
        f_L = SpaceTimeField(grid, np.stack([env_F(t, xs, vs) for t in grid.times]))
        g_L = Field(grid, env_G(xs, vs))
    else:
        zero_pt = [np.zeros(1)]
        f_L = env_F(0.0, zero_pt, zero_pt)
        g_L = env_G(zero_pt, zero_pt)

    # randomized check of the inequality at random (m, point) pairs
    rng = np.random.default_rng(seed)
    d = grid.d if grid is not None else 1
    t, x, v = _sample_points(n_checks, d, rng)
    m = rng.uniform(0.0, 4.0 * L, n_checks)
    fl = env_F(t, x, v)
    gl = env_G(x, v)
    Fv = spec.eval_F(t, x, v, m)
    Gv = spec.eval_G(x, v, m)
    if mode == "ratio":
        rhs_F = fl * m + (m / L) * Fv
        rhs_G = gl * m + (m / L) * Gv
    else:
        rhs_F = fl + (m / L) * Fv
        rhs_G = gl + (m / L) * Gv
    slack = 1e-12 * (1.0 + np.abs(Fv))
    bad = int(np.count_nonzero(Fv > rhs_F + slack) + np.count_nonzero(Gv > rhs_G + 1e-12 * (1.0 + np.abs(Gv))))
    return EnvelopeResult(f_L, g_L, mode, bad, 2 * n_checks)
