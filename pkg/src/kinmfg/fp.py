"""Forward solver for  d_t m - Delta_v m - v.D_x m - div_v(m b) = 0,  m(0) = m0.

Also provides level-set (De Giorgi) measurements of a computed density and a
particle cross-check based on the SDE  dX = -V dt,  dV = -b dt + sqrt(2) dB,
whose law solves the same equation.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Field, PhaseGrid, SpaceTimeField, boundary_mass, integrate
from .kernels import em_step, interp_phase
from .kolmogorov import OperatorConfig, strang_raw

MASS_TOL = 1e-10


class FPError(RuntimeError):
    """Non-finite or inadmissible density during the forward march."""


@dataclass(frozen=True)
class FPProblem:
    grid: PhaseGrid
    m0: Field
    b: SpaceTimeField | None = None  # trailing component axis of length d
    operator: OperatorConfig = field(default_factory=OperatorConfig)

    def __post_init__(self):
        if np.any(self.m0.values < 0):
            raise ValueError("m0 must be nonnegative")
        mass = integrate(self.m0)
        if abs(mass - 1.0) > MASS_TOL:
            raise ValueError(f"m0 must have unit mass (got {mass:.12g})")
        if self.b is not None:
            if self.b.data.shape != (self.grid.n_t + 1,) + self.grid.shape + (self.grid.d,):
                raise ValueError("drift must have shape (n_t+1, n_x^d, n_v^d, d)")


@dataclass
class FPResult:
    m: SpaceTimeField
    mass_error: np.ndarray  # |mass - 1| per level
    boundary_mass: np.ndarray  # mass in the outermost v cells per level
    rounding_clip: float  # total |negative| mass zeroed after roundoff, if any

    @property
    def leakage(self) -> float:
        """Mass lost through the v walls; zero for the no-flux discretisation."""
        return 0.0


def fp_step_raw(m, grid, dt, b_next, op):
    out = strang_raw(m, grid, dt, -1, b_next, "fp", op)
    neg = out < 0.0
    clipped = 0.0
    if neg.any():
        # the split steps are positivity preserving; anything here is roundoff
        clipped = float(-out[neg].sum() * grid.cell_volume)
        if clipped > 1e-12:
            raise FPError(f"negative density of mass {clipped:.3g} beyond roundoff")
        out = np.where(neg, 0.0, out)
    return out, clipped


def solve_fp_full(prob: FPProblem) -> FPResult:
    grid = prob.grid
    out = np.empty((grid.n_t + 1,) + grid.shape)
    out[0] = prob.m0.values
    drift = None if prob.b is None else prob.b.data
    clipped = 0.0
    for n in range(grid.n_t):
        b_next = None if drift is None else drift[n + 1]
        m, c = fp_step_raw(out[n], grid, grid.dt, b_next, prob.operator)
        if not np.all(np.isfinite(m)):
            raise FPError(f"non-finite density at time level {n + 1}")
        out[n + 1] = m
        clipped += c
    m_all = SpaceTimeField(grid, out)
    masses = out.reshape(len(out), -1).sum(axis=1) * grid.cell_volume
    edge = np.array([boundary_mass(level) for level in m_all])
    return FPResult(m_all, np.abs(masses - 1.0), edge, clipped)


def solve_fp(prob: FPProblem) -> SpaceTimeField:
    """March forward from m0; every level is nonnegative with unit mass."""
    return solve_fp_full(prob).m


# --------------------------------------------------------------------------
# level sets
# --------------------------------------------------------------------------
@dataclass
class LevelSequence:
    alphas: np.ndarray  # alpha_0 .. alpha_K
    U: np.ndarray  # int_0^T int (m/scale - alpha_k)_+^4
    level_measure: np.ndarray  # space-time measure of {m/scale > alpha_k}
    A: np.ndarray  # measure of {k-1 <= m/scale <= k}, k = 1..K
    chebyshev_violations: int
    chebyshev_checked: int
    scale: float
    schedule: str

    def first_zero(self) -> int | None:
        idx = np.flatnonzero(self.U == 0.0)
        return int(idx[0]) if idx.size else None


def level_schedule(K: int, schedule: str = "decreasing") -> np.ndarray:
    """Levels alpha_0..alpha_K.

    ``decreasing``: alpha_k = 2 + 2^(1-k), i.e. 4, 3, 2.5, 2.25, ... (decreasing to 2).
    ``ascending``: alpha_k = 2 - 2^(-k), i.e. 1, 1.5, 1.75, ... (increasing to 2),
    for which consecutive gaps are 2^(-k) and the Chebyshev step is valid.
    """
    k = np.arange(K + 1, dtype=np.float64)
    if schedule == "decreasing":
        return 2.0 + 2.0 ** (1.0 - k)
    if schedule == "ascending":
        return 2.0 - 2.0 ** (-k)
    raise ValueError("schedule must be 'decreasing' or 'ascending'")


def de_giorgi_levels(m: SpaceTimeField, K: int, scale: float = 1.0, schedule: str = "decreasing") -> LevelSequence:
    if np.any(m.data < 0):
        raise ValueError("density must be nonnegative")
    if K < 1:
        raise ValueError("K must be >= 1")
    grid = m.grid
    w = grid.time_weights() * grid.cell_volume
    scaled = m.data / scale
    alphas = level_schedule(K, schedule)
    U = np.empty(K + 1)
    meas = np.empty(K + 1)
    trunc = []
    for k, a in enumerate(alphas):
        mk = np.maximum(scaled - a, 0.0)
        trunc.append(mk)
        U[k] = float((mk**4).reshape(len(w), -1).sum(axis=1) @ w)
        meas[k] = float((mk > 0).reshape(len(w), -1).sum(axis=1) @ w)
    # Chebyshev step, checked per time level: |{m_k > 0}| <= 16^k int m_{k-1}^4
    violations = 0
    checked = 0
    for k in range(1, K + 1):
        lhs = (trunc[k] > 0).reshape(len(w), -1).sum(axis=1)
        rhs = 16.0**k * (trunc[k - 1] ** 4).reshape(len(w), -1).sum(axis=1)
        violations += int(np.count_nonzero(lhs > rhs * (1.0 + 1e-12)))
        checked += len(w)
    A = np.array(
        [float(((scaled >= j - 1) & (scaled <= j)).reshape(len(w), -1).sum(axis=1) @ w) for j in range(1, K + 1)]
    )
    return LevelSequence(alphas, U, meas, A, violations, checked, scale, schedule)


# --------------------------------------------------------------------------
# particles
# --------------------------------------------------------------------------
@dataclass
class MonteCarloReport:
    histogram: Field
    l1_to_pde: float | None
    var_v: float
    var_v_stderr: float
    var_v0: float
    time_modulus: dict[float, float]
    n_particles: int
    seed: int

    @property
    def modulus_max(self) -> float:
        return max(self.time_modulus.values()) if self.time_modulus else 0.0


def _sample_initial(m0: Field, n: int, rng: np.random.Generator):
    grid = m0.grid
    d = grid.d
    p = m0.values.ravel() * grid.cell_volume
    p = p / p.sum()
    cells = rng.choice(p.size, size=n, p=p)
    idx = np.unravel_index(cells, grid.phase_shape)
    jitter = rng.uniform(-0.5, 0.5, size=(n, 2 * d))
    pos = np.stack([grid.x[idx[k]] + grid.h_x * jitter[:, k] for k in range(d)], axis=1)
    vel = np.stack([grid.v[idx[d + k]] + grid.h_v * jitter[:, d + k] for k in range(d)], axis=1)
    pos = (pos + grid.L_x) % (2.0 * grid.L_x) - grid.L_x
    return np.ascontiguousarray(pos), np.ascontiguousarray(vel)


def _drift_at(b_level: np.ndarray, grid: PhaseGrid, pos, vel) -> np.ndarray:
    d = grid.d
    coords = np.concatenate([(pos + grid.L_x) / grid.h_x, (vel - grid.v[0]) / grid.h_v], axis=1)
    periodic = [True] * d + [False] * d
    phase = grid.phase(b_level)
    return np.stack([interp_phase(phase[..., k], periodic, coords) for k in range(d)], axis=1)


def _histogram(grid: PhaseGrid, pos, vel, counts: np.ndarray) -> None:
    d = grid.d
    ix = np.rint((pos + grid.L_x) / grid.h_x).astype(np.int64) % grid.n_x
    iv = np.clip(np.floor((vel + grid.L_v) / grid.h_v).astype(np.int64), 0, grid.n_v - 1)
    flat = np.ravel_multi_index(tuple(ix[:, k] for k in range(d)) + tuple(iv[:, k] for k in range(d)), grid.phase_shape)
    counts += np.bincount(flat, minlength=counts.size)


def _torus_gap(a, b, L):
    dx = np.abs(a - b) % (2.0 * L)
    return np.minimum(dx, 2.0 * L - dx)


def monte_carlo_fp(
    prob: FPProblem,
    n_particles: int,
    seed: int = 0,
    m_pde: SpaceTimeField | None = None,
    block_size: int = 1 << 16,
    n_tracked: int = 4096,
    trajectory_csv: str | Path | None = None,
    n_csv: int = 64,
) -> MonteCarloReport:
    """Euler-Maruyama particles with periodic x and reflecting v walls.

    Blocks of ``block_size`` particles draw from independent streams spawned
    from ``seed``; results are reproducible for a fixed block size.  The
    time modulus is estimated from the first ``n_tracked`` particles via the
    synchronous-coupling bound d_1(w(t), w(s)) <= E|Z_t - Z_s|.
    """
    if n_particles < 10_000:
        warnings.warn("fewer than 1e4 particles: histogram noise dominates", stacklevel=2)
    grid = prob.grid
    d = grid.d
    dt = grid.dt
    drift = None if prob.b is None else prob.b.data
    counts = np.zeros(grid.n_cells, dtype=np.int64)
    n_blocks = math.ceil(n_particles / block_size)
    streams = np.random.SeedSequence(seed).spawn(n_blocks)
    s1 = s2 = s4 = 0.0
    s1_0 = s2_0 = 0.0
    n_tracked = min(n_tracked, n_particles)
    track = np.empty((grid.n_t + 1, n_tracked, 2 * d))
    writer = None
    fh = None
    if trajectory_csv is not None:
        fh = open(trajectory_csv, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{k + 1}" for k in range(d)] + [f"v{k + 1}" for k in range(d)])
    try:
        done = 0
        for blk, ss in enumerate(streams):
            size = min(block_size, n_particles - done)
            rng = np.random.default_rng(ss)
            pos, vel = _sample_initial(prob.m0, size, rng)
            s1_0 += float(vel[:, 0].sum())
            s2_0 += float((vel[:, 0] ** 2).sum())
            n_tr = max(0, min(size, n_tracked - done))
            if n_tr:
                track[0, done : done + n_tr] = np.concatenate([pos[:n_tr], vel[:n_tr]], axis=1)
            n_w = min(size, n_csv) if (writer is not None and blk == 0) else 0
            if n_w:
                for p in range(n_w):
                    writer.writerow([0.0, *pos[p], *vel[p]])
            zero = np.zeros_like(vel)
            for n in range(grid.n_t):
                b = zero if drift is None else np.ascontiguousarray(_drift_at(drift[n + 1], grid, pos, vel))
                noise = rng.standard_normal(vel.shape)
                em_step(pos, vel, b, noise, dt, grid.L_x, grid.L_v)
                if n_tr:
                    track[n + 1, done : done + n_tr] = np.concatenate([pos[:n_tr], vel[:n_tr]], axis=1)
                if n_w:
                    t = (n + 1) * dt
                    for p in range(n_w):
                        writer.writerow([t, *pos[p], *vel[p]])
            _histogram(grid, pos, vel, counts)
            v1 = vel[:, 0]
            s1 += float(v1.sum())
            s2 += float((v1**2).sum())
            s4 += float(((v1) ** 4).sum())
            done += size
    finally:
        if fh is not None:
            fh.close()
    N = float(n_particles)
    hist = grid.flat(counts.reshape(grid.phase_shape) / (N * grid.cell_volume))
    mean = s1 / N
    var = s2 / N - mean**2
    mu4 = s4 / N  # raw fourth moment; mean is ~0 in the symmetric test problems
    stderr = math.sqrt(max(mu4 - var**2, 0.0) / N)
    var0 = s2_0 / N - (s1_0 / N) ** 2
    l1 = None
    if m_pde is not None:
        l1 = float(np.abs(hist - m_pde.data[-1]).sum() * grid.cell_volume)
    modulus = _time_modulus(track, grid)
    return MonteCarloReport(Field(grid, hist), l1, var, stderr, var0, modulus, n_particles, seed)


def _time_modulus(track: np.ndarray, grid: PhaseGrid) -> dict[float, float]:
    d = grid.d
    n_levels = track.shape[0]
    out = {}
    lag = 1
    while lag < n_levels:
        a = track[lag:]
        b = track[:-lag]
        gap_x = _torus_gap(a[..., :d], b[..., :d], grid.L_x)
        gap_v = a[..., d:] - b[..., d:]
        dist = np.sqrt((gap_x**2).sum(axis=-1) + (gap_v**2).sum(axis=-1)).mean(axis=1)
        delta = lag * grid.dt
        out[delta] = float(dist.max() / math.sqrt(delta))
        lag *= 2
    return out
