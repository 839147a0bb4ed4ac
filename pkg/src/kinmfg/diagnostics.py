"""Scalar series and checks computed from solved fields.

Every function is a pure reducer over immutable fields.  Space integrals use
the midpoint rule of :mod:`kinmfg.grid`; time integrals use trapezoidal
weights unless stated otherwise.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coupling import CouplingSpec
from .fp import de_giorgi_levels
from .grid import Field, PhaseGrid, SpaceTimeField, fractional_seminorm, integrate, lp_norm, moment, WEIGHTS
from .hamiltonian import Hamiltonian
from .hjb import gradient_v_raw

SQRT_FLOOR = 1e-12
SLACK = 0.05


def _per_level(values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Space integral of every level of a (n_levels, ...) array."""
    return values.reshape(values.shape[0], -1).sum(axis=1) * grid.cell_volume


def _spacetime(values: np.ndarray, grid: PhaseGrid) -> float:
    return float(_per_level(values, grid) @ grid.time_weights())


def _grad_v_all(f: SpaceTimeField) -> np.ndarray:
    return np.stack([gradient_v_raw(level, f.grid) for level in f.data])


def _grad_x_raw(values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Centred periodic differences in x, shape ``grid.shape + (d,)``."""
    phase = grid.phase(values)
    out = np.empty(grid.phase_shape + (grid.d,))
    for k in range(grid.d):
        out[..., k] = (np.roll(phase, -1, axis=k) - np.roll(phase, 1, axis=k)) / (2.0 * grid.h_x)
    return grid.flat(out)


# --------------------------------------------------------------------------
# exponents and norms
# --------------------------------------------------------------------------
def gain_exponents(d: int) -> tuple[float, float]:
    """(q, p) = ((Q+2)/(Q+1), (Q+2)/Q) with Q = d + 2; note 1/p = 1/q - 1/(Q+2)."""
    if d < 1:
        raise ValueError("d must be >= 1")
    Q = d + 2
    return (Q + 2) / (Q + 1), (Q + 2) / Q


def drift_energy(u: SpaceTimeField, m: SpaceTimeField, H: Hamiltonian) -> float:
    """|| m |H_p(D_v u)|^2 ||_1 over [0, T] x phase space."""
    b = np.stack([H.grad(g) for g in _grad_v_all(u)])
    return _spacetime(m.data * np.sum(b**2, axis=-1), u.grid)


def drift_energy_from_b(m: SpaceTimeField, b: np.ndarray) -> float:
    return _spacetime(m.data * np.sum(b**2, axis=-1), m.grid)


def sqrt_gradient(m: SpaceTimeField) -> float:
    """|| D_v sqrt(m) ||_2^2 with the vacuum floor sqrt(m + 1e-12)."""
    roots = SpaceTimeField(m.grid, np.sqrt(np.maximum(m.data, 0.0) + SQRT_FLOOR))
    g = _grad_v_all(roots)
    return _spacetime(np.sum(g**2, axis=-1), m.grid)


def gain_norms(m: SpaceTimeField, b: np.ndarray) -> dict:
    q, p = gain_exponents(m.grid.d)
    weighted = SpaceTimeField(m.grid, m.data * np.sum(b**2, axis=-1))
    return {"q": q, "p": p, "m_p": lp_norm(m, p), "m_b2_q": lp_norm(weighted, q)}


# --------------------------------------------------------------------------
# renormalisation
# --------------------------------------------------------------------------
def renorm_residual(f: SpaceTimeField | Field, n: float, mode: str = "fp") -> float:
    """(1/n) * integral of |D_v f|^2 over the band {n < f < 2n}.

    ``mode="fp"`` requires a nonnegative density; ``mode="hjb"`` accepts any
    sign.  A single slice is integrated over phase space only; space-time
    fields are integrated in time with trapezoidal weights.
    """
    if not n > 0:
        raise ValueError("n must be positive")
    if mode not in ("fp", "hjb"):
        raise ValueError("mode must be 'fp' or 'hjb'")
    single = isinstance(f, Field)
    data = f.values[None] if single else f.data
    if mode == "fp" and np.any(data < 0):
        raise ValueError("fp mode needs a nonnegative field")
    band = (data > n) & (data < 2.0 * n)
    if not band.any():
        return 0.0
    grid = f.grid
    g2 = np.sum(np.stack([gradient_v_raw(level, grid) for level in data]) ** 2, axis=-1)
    g2 = np.where(band, g2, 0.0)
    if single:
        return float(g2.sum() * grid.cell_volume) / n
    return _spacetime(g2, grid) / n


# --------------------------------------------------------------------------
# monotonicity / duality
# --------------------------------------------------------------------------
def lasry_lions_terms(u, m, u2, m2, coupling: CouplingSpec, H: Hamiltonian) -> tuple[float, float, float]:
    """The three nonnegative terms of the uniqueness argument.

    I   = int (G(m(T)) - G(m'(T))) (m(T) - m'(T))
    II  = int int (F(m) - F(m')) (m - m')
    III = int int m [H(p') - H(p) - (p' - p).H_p(p)] + m' [H(p) - H(p') - (p - p').H_p(p')]
    with p = D_v u, p' = D_v u'.
    """
    grid = u.grid
    if not (grid.compatible(u2.grid) and grid.compatible(m.grid) and grid.compatible(m2.grid)):
        raise ValueError("all fields must share a grid")
    mT, m2T = m.data[-1], m2.data[-1]
    xs, vs = grid.x_components(), grid.v_components()
    I = integrate(
        (coupling.eval_G(xs, vs, np.maximum(mT, 0)) - coupling.eval_G(xs, vs, np.maximum(m2T, 0))) * (mT - m2T), grid
    )
    Fa = coupling.F_on_grid(SpaceTimeField(grid, np.maximum(m.data, 0))).data
    Fb = coupling.F_on_grid(SpaceTimeField(grid, np.maximum(m2.data, 0))).data
    II = _spacetime((Fa - Fb) * (m.data - m2.data), grid)
    p, q = _grad_v_all(u), _grad_v_all(u2)
    Hp, Hq = H.eval(p), H.eval(q)
    gp, gq = H.grad(p), H.grad(q)
    br1 = Hq - Hp - np.sum((q - p) * gp, axis=-1)
    br2 = Hp - Hq - np.sum((p - q) * gq, axis=-1)
    III = _spacetime(m.data * br1 + m2.data * br2, grid)
    return float(I), float(II), float(III)


def l1_ledger(u: SpaceTimeField, m: SpaceTimeField, coupling: CouplingSpec, H: Hamiltonian) -> dict:
    """L1 quantities controlled uniformly in the regularisation parameter."""
    grid = u.grid
    F = coupling.F_on_grid(SpaceTimeField(grid, np.maximum(m.data, 0))).data
    G = coupling.G_on_grid(Field(grid, np.maximum(m.data[-1], 0))).values
    grads = _grad_v_all(u)
    Hv = H.eval(grads)
    b = H.grad(grads)
    abs_u = _per_level(np.abs(u.data), grid)
    entries = {
        "sup_u": float(abs_u.max()),
        "u0": float(abs_u[0]),
        "F": _spacetime(np.abs(F), grid),
        "Fm": _spacetime(np.abs(F * m.data), grid),
        "G": float(np.abs(G).sum() * grid.cell_volume),
        "hamiltonian": _spacetime(np.abs(Hv), grid),
        "drift_energy": _spacetime(m.data * np.sum(b**2, axis=-1), grid),
    }
    budget = entries["F"] + entries["G"]
    entries["chain_ok"] = bool(
        entries["u0"] + entries["hamiltonian"] <= (1.0 + SLACK) * budget + 1e-14
        and entries["sup_u"] <= (1.0 + SLACK) * budget + 1e-14
    )
    return entries


# --------------------------------------------------------------------------
# entropy, tails, moments
# --------------------------------------------------------------------------
@dataclass
class EntropyCheck:
    entropy: np.ndarray  # int m log m per level
    fisher_cum: np.ndarray  # 1/2 int_0^t int |D_v m|^2 / m
    drift_cum: np.ndarray  # 1/2 int_0^t int m |b|^2
    margin: np.ndarray  # rhs - lhs + slack per level
    ok: bool
    loose_ok: bool  # the weaker form with the dissipation on the right-hand side


def _cumtrapz(series: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(series)
    out[1:] = np.cumsum(0.5 * dt * (series[1:] + series[:-1]))
    return out


def entropy_check(m: SpaceTimeField, b: np.ndarray | None, slack: float = SLACK) -> EntropyCheck:
    """Discrete form of  int m log m(t) + 1/2 int_0^t I(m) <= int m0 log m0 + 1/2 int_0^t int m|b|^2.

    I(m) = int |D_v m|^2 / m = 4 int |D_v sqrt(m)|^2; the slack is a fraction
    of the sum of absolute values of the terms.
    """
    grid = m.grid
    ent = np.array([moment(level, "entropy") for level in m])
    roots = SpaceTimeField(grid, np.sqrt(np.maximum(m.data, 0.0) + SQRT_FLOOR))
    fisher = 4.0 * _per_level(np.sum(_grad_v_all(roots) ** 2, axis=-1), grid)
    if b is None:
        drift = np.zeros(len(m))
    else:
        drift = _per_level(m.data * np.sum(b**2, axis=-1), grid)
    f_cum = 0.5 * _cumtrapz(fisher, grid.dt)
    d_cum = 0.5 * _cumtrapz(drift, grid.dt)
    lhs = ent + f_cum
    rhs = ent[0] + d_cum
    tol = slack * (np.abs(ent) + np.abs(ent[0]) + f_cum + d_cum)
    margin = rhs - lhs + tol
    loose = ent.max() <= ent[0] + d_cum[-1] + f_cum[-1] + slack * (np.abs(ent).max() + abs(ent[0]) + d_cum[-1] + f_cum[-1])
    return EntropyCheck(ent, f_cum, d_cum, margin, bool(np.all(margin >= 0)), bool(loose))


def _radius_sq(grid: PhaseGrid) -> np.ndarray:
    return grid.sq_x() + grid.sq_v()


def tail_mass(m: SpaceTimeField, R: float) -> float:
    """sup over time of the mass outside the phase-space ball of radius R."""
    outside = _radius_sq(m.grid) > R * R
    return float(_per_level(np.where(outside, m.data, 0.0), m.grid).max())


@dataclass
class TailCheck:
    radii: tuple
    tails: dict
    C: float
    ok: bool


def tail_check(m: SpaceTimeField, fit_radius: float = 2.0, radii=(3.0, 4.0)) -> TailCheck:
    tails = {R: tail_mass(m, R) for R in (fit_radius, *radii)}
    C = tails[fit_radius] * fit_radius**2
    ok = all(tails[R] <= C / R**2 * (1.0 + 1e-12) for R in radii)
    return TailCheck((fit_radius, *radii), tails, C, ok)


def moment_series(m: SpaceTimeField) -> dict[str, np.ndarray]:
    return {w: np.array([moment(level, w) for level in m]) for w in WEIGHTS if w != "entropy"}


def gronwall_fit(times: np.ndarray, series: np.ndarray) -> tuple[float, float]:
    """(A, B) with series <= A exp(B t): least-squares log fit, then lifted to cover."""
    series = np.asarray(series, dtype=float)
    if np.any(series <= 0):
        raise ValueError("series must be positive")
    B, logA = np.polyfit(times, np.log(series), 1)
    lift = float(np.max(np.log(series) - (logA + B * times)))
    return float(math.exp(logA + lift)), float(B)


# --------------------------------------------------------------------------
# regularity
# --------------------------------------------------------------------------
def regularity_report(m: SpaceTimeField) -> dict[str, float]:
    """sup_t ||D m(t)||_2 and the space-time norms ||D_vv m||_2, ||D_v D_x m||_2."""
    grid = m.grid
    gv = _grad_v_all(m)
    gx = np.stack([_grad_x_raw(level, grid) for level in m.data])
    sup_dm = float(np.sqrt(_per_level(np.sum(gv**2, axis=-1) + np.sum(gx**2, axis=-1), grid).max()))
    vv = np.zeros(m.data.shape)
    vx = np.zeros(m.data.shape)
    for k in range(grid.d):
        comp = SpaceTimeField(grid, gv[..., k])
        vv = vv + np.sum(_grad_v_all(comp) ** 2, axis=-1)
        vx = vx + np.sum(np.stack([_grad_x_raw(level, grid) for level in comp.data]) ** 2, axis=-1)
    return {
        "sup_grad": sup_dm,
        "d2_vv": math.sqrt(_spacetime(vv, grid)),
        "d_v_d_x": math.sqrt(_spacetime(vx, grid)),
    }


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------
@dataclass
class DiagnosticsReport:
    times: np.ndarray
    series: dict[str, np.ndarray] = field(default_factory=dict)
    scalars: dict[str, float] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(s)) for s in self.series.values()) and all(
            math.isfinite(v) for v in self.scalars.values()
        )

    def write_csv(self, directory: str | Path) -> list[Path]:
        """One two-column CSV per series: (time or index, value)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, values in self.series.items():
            values = np.asarray(values, dtype=float)
            index_name, index = ("t", self.times) if len(values) == len(self.times) else ("index", np.arange(len(values)))
            path = directory / f"{name}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow([index_name, "value"])
                for i, v in zip(index, values):
                    writer.writerow([repr(float(i)), repr(float(v))])
            paths.append(path)
        return paths

    def summary(self) -> dict:
        return {
            "scalars": {k: float(v) for k, v in self.scalars.items()},
            "checks": {k: bool(v) for k, v in self.checks.items()},
            "series": sorted(self.series),
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


def field_diagnostics(
    m: SpaceTimeField, b: np.ndarray | None = None, levels=(2.0, 4.0, 8.0), boundary: np.ndarray | None = None
) -> DiagnosticsReport:
    """Diagnostics that need only a density (and optionally its drift)."""
    grid = m.grid
    rep = DiagnosticsReport(grid.times.copy())
    mass = _per_level(m.data, grid)
    rep.series["mass"] = mass
    rep.checks["mass"] = bool(np.all(np.abs(mass - 1.0) <= 1e-10))
    rep.checks["positivity"] = bool(m.data.min() >= 0.0)
    ent = entropy_check(m, b)
    rep.series["entropy"] = ent.entropy
    rep.series["fisher_cumulative"] = ent.fisher_cum
    rep.series["drift_cumulative"] = ent.drift_cum
    rep.checks["entropy"] = ent.ok
    for w, s in moment_series(m).items():
        rep.series[f"moment_{w}"] = s
        A, B = gronwall_fit(grid.times, np.maximum(s, 1e-300))
        rep.scalars[f"moment_{w}_A"] = A
        rep.scalars[f"moment_{w}_B"] = B
    tails = tail_check(m)
    rep.scalars["tail_C"] = tails.C
    for R, t in tails.tails.items():
        rep.scalars[f"tail_R{R:g}"] = t
    rep.checks["tails"] = tails.ok
    if b is None:
        b = np.zeros(m.data.shape + (grid.d,))
    rep.scalars["drift_energy"] = drift_energy_from_b(m, b)
    rep.scalars["sqrt_gradient"] = sqrt_gradient(m)
    for k, v in gain_norms(m, b).items():
        rep.scalars[f"gain_{k}"] = v
    res = [renorm_residual(m, n) for n in levels]
    rep.series["renorm_residual_fp"] = np.array(res)
    rep.checks["renorm_monotone"] = bool(all(b2 <= a + 1e-14 for a, b2 in zip(res, res[1:])))
    sup = float(m.data.max())
    if sup > 0:
        dg = de_giorgi_levels(m, 6, scale=sup / 3.0, schedule="decreasing")
        rep.series["de_giorgi_U"] = dg.U
        rep.series["de_giorgi_alpha"] = dg.alphas
    rep.scalars["frac_x_1_3"] = fractional_seminorm(m, 1.0 / 3.0, "x")
    rep.scalars["frac_t_1_3"] = fractional_seminorm(m, 1.0 / 3.0, "t")
    for k, v in regularity_report(m).items():
        rep.scalars[f"regularity_{k}"] = v
    rep.series["boundary_mass"] = np.zeros(len(m)) if boundary is None else np.asarray(boundary, dtype=float)
    return rep


def run_diagnostics(sol, problem, cfg=None) -> DiagnosticsReport:
    """Full suite for a solved coupled system (imports kept local to avoid cycles)."""
    from .mfg import duality_terms

    levels = cfg.truncation_levels if cfg is not None else (2.0, 4.0, 8.0)
    grads = _grad_v_all(sol.u)
    b = problem.H.grad(grads)
    rep = field_diagnostics(sol.m, b, levels, sol.boundary_mass)
    rep.series["renorm_residual_hjb"] = np.array([renorm_residual(sol.u, n, mode="hjb") for n in levels])
    terms = duality_terms(sol.u, sol.m, problem)
    rep.scalars["duality_gap"] = terms.gap
    rep.scalars["duality_scale"] = terms.scale
    rep.series["residual_history"] = np.array(sol.residual_history)
    if sol.lasry_lions:
        ll = np.array(sol.lasry_lions)
        for i, name in enumerate(("I", "II", "III")):
            rep.series[f"lasry_lions_{name}"] = ll[:, i]
        rep.checks["lasry_lions"] = bool(np.all(ll >= -1e-8))
    ledger = l1_ledger(sol.u, sol.m, problem.coupling, problem.H)
    for k, v in ledger.items():
        if k == "chain_ok":
            rep.checks["l1_chain"] = bool(v)
        else:
            rep.scalars[f"l1_{k}"] = float(v)
    rep.checks["converged"] = sol.status == "converged"
    return rep
