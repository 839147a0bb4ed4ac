"""Coupled HJB / Fokker-Planck system: fixed-point map and continuation in epsilon.

Given a density guess ``mu``, :func:`phi_map` solves the HJB equation with
``F(mu)`` and ``G(mu(T))``, extracts the drift ``b = H_p(D_v u)`` and pushes
``m0`` forward.  :func:`solve_mfg` iterates the damped map
``m <- (1 - theta) m + theta Phi(m)`` until the sup-in-time L2 change drops
below tolerance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .coupling import CouplingSpec
from .fp import FPProblem, solve_fp_full
from .grid import Field, PhaseGrid, SpaceTimeField, lp_norm
from .hamiltonian import Hamiltonian, Quadratic, Regularized
from .hjb import HJBProblem, drift_from_value, gradient_v_raw, solve_hjb
from .kolmogorov import OperatorConfig

INITS = ("kolmogorov", "uniform", "heat")


class MFGDivergence(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class MFGConfig:
    damping: float = 0.5
    tol_fixed_point: float = 1e-6
    max_iters: int = 200
    epsilon_schedule: tuple[float, ...] = ()
    truncation_levels: tuple[float, ...] = (2.0, 4.0, 8.0)
    init: str = "kolmogorov"
    divergence_window: int = 5

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not self.tol_fixed_point > 0:
            raise ValueError("tol_fixed_point must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        sched = tuple(self.epsilon_schedule)
        if any(e <= 0 for e in sched):
            raise ValueError("epsilon_schedule entries must be positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("schedule must be strictly decreasing")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        object.__setattr__(self, "epsilon_schedule", sched)
        object.__setattr__(self, "truncation_levels", tuple(self.truncation_levels))


@dataclass(frozen=True)
class MFGProblem:
    grid: PhaseGrid
    H: Hamiltonian
    coupling: CouplingSpec
    m0: Field
    # Inside the coupled solve both equations use the linear semi-Lagrangian
    # shift: the FP transport is then the exact adjoint of the HJB transport,
    # which keeps the discrete energy balance (duality_gap) tight.
    fp_operator: OperatorConfig = field(default_factory=lambda: OperatorConfig(transport_scheme="semi_lagrangian"))
    hjb_operator: OperatorConfig = field(default_factory=lambda: OperatorConfig(transport_scheme="semi_lagrangian"))
    hjb_scheme: str = "upwind_godunov"

    def with_hamiltonian(self, H: Hamiltonian) -> "MFGProblem":
        return replace(self, H=H)


@dataclass
class MFGSolution:
    u: SpaceTimeField
    m: SpaceTimeField
    residual_history: list[float]
    epsilon: float
    status: str
    lasry_lions: list[tuple[float, float, float]] = field(default_factory=list)
    boundary_mass: np.ndarray | None = None
    rounding_clip: float = 0.0
    diagnostics: object | None = None

    @property
    def iterations(self) -> int:
        return len(self.residual_history)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# --------------------------------------------------------------------------
def sup_l2_distance(a: SpaceTimeField, b: SpaceTimeField) -> float:
    """Sup over time levels of the L2 distance between slices."""
    diff = (a.data - b.data).reshape(len(a), -1)
    return float(np.sqrt((diff**2).sum(axis=1).max() * a.grid.cell_volume))


def initial_guess(problem: MFGProblem, kind: str = "kolmogorov") -> SpaceTimeField:
    grid = problem.grid
    if kind == "kolmogorov":
        return solve_fp_full(FPProblem(grid, problem.m0, None, problem.fp_operator)).m
    if kind == "uniform":
        level = np.full(grid.shape, 1.0 / grid.volume)
        return SpaceTimeField(grid, np.broadcast_to(level, (grid.n_t + 1,) + grid.shape))
    if kind == "heat":
        from .kolmogorov import v_step_raw

        smooth = problem.m0.values
        for _ in range(4):
            smooth = v_step_raw(smooth, grid, 0.05, None, "fp", problem.fp_operator)
        return SpaceTimeField(grid, np.broadcast_to(smooth, (grid.n_t + 1,) + grid.shape))
    raise ValueError(f"unknown initialisation {kind!r}")


@dataclass
class PhiResult:
    u: SpaceTimeField
    m: SpaceTimeField
    drift: np.ndarray
    boundary_mass: np.ndarray
    rounding_clip: float


def phi_full(mu: SpaceTimeField, problem: MFGProblem) -> PhiResult:
    if np.any(mu.data < 0):
        raise ValueError("mu must be nonnegative")
    grid = problem.grid
    F = problem.coupling.F_on_grid(mu)
    G = problem.coupling.G_on_grid(mu[grid.n_t])
    u = solve_hjb(HJBProblem(grid, problem.H, F, G, problem.hjb_scheme, problem.hjb_operator))
    b = drift_from_value(u, problem.H)
    res = solve_fp_full(FPProblem(grid, problem.m0, SpaceTimeField(grid, b), problem.fp_operator))
    return PhiResult(u, res.m, b, res.boundary_mass, res.rounding_clip)


def phi_map(mu: SpaceTimeField, problem: MFGProblem) -> tuple[SpaceTimeField, SpaceTimeField]:
    """One evaluation of the fixed-point map; returns ``(u, m)``."""
    r = phi_full(mu, problem)
    return r.u, r.m


def _check_hamiltonian(H: Hamiltonian) -> None:
    if not math.isfinite(H.lipschitz_bound):
        raise ValueError(
            "solve_mfg needs a Lipschitz Hamiltonian; regularise quadratic ones "
            "with Regularized(H, eps) or use epsilon_continuation"
        )


def solve_mfg(
    cfg: MFGConfig,
    problem: MFGProblem,
    init: SpaceTimeField | None = None,
    diagnose: bool = False,
    track_lasry_lions: bool = True,
) -> MFGSolution:
    """Damped Picard iteration for the coupled system.

    The returned pair is ``(u, m) = Phi(m_k)`` for the last iterate, so ``m``
    is exactly the Fokker-Planck solution driven by ``u``.
    """
    _check_hamiltonian(problem.H)
    from .diagnostics import lasry_lions_terms

    mu = init if init is not None else initial_guess(problem, cfg.init)
    theta = cfg.damping
    history: list[float] = []
    ll: list[tuple[float, float, float]] = []
    prev = None
    growth = 0
    status = "max_iters"
    for _ in range(cfg.max_iters):
        r = phi_full(mu, problem)
        nxt = SpaceTimeField(problem.grid, (1.0 - theta) * mu.data + theta * r.m.data)
        res = sup_l2_distance(nxt, mu)
        if track_lasry_lions and prev is not None:
            ll.append(lasry_lions_terms(prev.u, prev.m, r.u, r.m, problem.coupling, problem.H))
        if history and res > history[-1]:
            growth += 1
        else:
            growth = 0
        history.append(res)
        prev = r
        mu = nxt
        if not math.isfinite(res):
            raise MFGDivergence("non-finite fixed-point residual", history)
        if res <= cfg.tol_fixed_point:
            status = "converged"
            break
        if growth >= cfg.divergence_window:
            raise MFGDivergence(
                f"residual grew for {growth} consecutive iterations (last {res:.3g})", history
            )
    eps = problem.H.epsilon if isinstance(problem.H, Regularized) else 0.0
    sol = MFGSolution(prev.u, prev.m, history, eps, status, ll, prev.boundary_mass, prev.rounding_clip)
    if diagnose:
        from .diagnostics import run_diagnostics

        sol.diagnostics = run_diagnostics(sol, problem, cfg)
    return sol


# --------------------------------------------------------------------------
@dataclass
class ContinuationLevel:
    epsilon: float
    solution: MFGSolution
    drift_energy: float
    hamiltonian_l1: float
    sup_u_l1: float
    ledger: dict


@dataclass
class ContinuationResult:
    levels: list[ContinuationLevel]
    cauchy_m: list[float]
    cauchy_u: list[float]
    cauchy_trunc_grad: list[float]
    truncation: float
    error: str | None = None

    @property
    def solutions(self) -> list[MFGSolution]:
        return [lvl.solution for lvl in self.levels]

    def series(self, name: str) -> np.ndarray:
        if name in ("drift_energy", "hamiltonian_l1", "sup_u_l1"):
            return np.array([getattr(lvl, name) for lvl in self.levels])
        return np.array([lvl.ledger[name] for lvl in self.levels])


def _truncated_gradient(u: SpaceTimeField, k: float) -> np.ndarray:
    grid = u.grid
    return np.stack([gradient_v_raw(np.minimum(level, k), grid) for level in u.data])


def epsilon_continuation(cfg: MFGConfig, problem: MFGProblem, truncation: float = 1.0) -> ContinuationResult:
    """Solve with H^eps for each eps in ``cfg.epsilon_schedule``, warm starting each level."""
    if not cfg.epsilon_schedule:
        raise ValueError("epsilon_schedule must be nonempty")
    from .diagnostics import drift_energy, l1_ledger

    base = problem.H.base if isinstance(problem.H, Regularized) else problem.H
    levels: list[ContinuationLevel] = []
    warm = None
    error = None
    for eps in cfg.epsilon_schedule:
        H = Regularized(base, eps)
        prob = problem.with_hamiltonian(H)
        try:
            sol = solve_mfg(cfg, prob, init=warm, track_lasry_lions=False)
        except (MFGDivergence, ArithmeticError, RuntimeError) as exc:
            error = f"epsilon={eps}: {exc}"
            break
        warm = sol.m
        ledger = l1_ledger(sol.u, sol.m, problem.coupling, H)
        levels.append(
            ContinuationLevel(eps, sol, drift_energy(sol.u, sol.m, H), ledger["hamiltonian"], ledger["sup_u"], ledger)
        )
    cm, cu, cg = [], [], []
    for a, b in zip(levels, levels[1:]):
        sa, sb = a.solution, b.solution
        cm.append(lp_norm(sa.m - sb.m, 1))
        cu.append(lp_norm(sa.u - sb.u, 1))
        ga, gb = _truncated_gradient(sa.u, truncation), _truncated_gradient(sb.u, truncation)
        cg.append(lp_norm(SpaceTimeField(sa.u.grid, ga - gb), 2))
    return ContinuationResult(levels, cm, cu, cg, truncation, error)


# --------------------------------------------------------------------------
@dataclass
class DualityTerms:
    terminal: float  # int u(T) m(T)
    excess: float  # int int m (H_p(D_v u).D_v u - H(D_v u))
    coupling: float  # int int F(m) m
    initial: float  # int m0 u(0)

    @property
    def gap(self) -> float:
        return abs(self.terminal + self.excess + self.coupling - self.initial)

    @property
    def scale(self) -> float:
        return abs(self.initial)


def duality_terms(
    u: SpaceTimeField, m: SpaceTimeField, problem: MFGProblem, time_rule: str = "trapezoid"
) -> DualityTerms:
    """The four integrals of the energy balance obtained by testing FP with u.

    ``time_rule="trapezoid"`` (default) pairs equal levels with trapezoidal
    weights; ``"scheme"`` pairs m at level n with the gradient of u at level
    n+1 and F at level n, mirroring how one discrete step uses its data.
    """
    grid = u.grid
    H = problem.H
    vol = grid.cell_volume
    m_data = m.data
    F = problem.coupling.F_on_grid(SpaceTimeField(grid, np.maximum(m_data, 0.0))).data
    excess_levels = np.stack([H.legendre_excess(gradient_v_raw(level, grid)) for level in u.data])
    per_level_F = (F * m_data).reshape(len(m), -1).sum(axis=1) * vol
    if time_rule == "scheme":
        ex = (m_data[:-1] * excess_levels[1:]).reshape(grid.n_t, -1).sum(axis=1) * vol
        excess = float(ex.sum() * grid.dt)
        coupling = float(per_level_F[:-1].sum() * grid.dt)
    elif time_rule == "trapezoid":
        w = grid.time_weights()
        excess = float(((m_data * excess_levels).reshape(len(m), -1).sum(axis=1) * vol) @ w)
        coupling = float(per_level_F @ w)
    else:
        raise ValueError("time_rule must be 'scheme' or 'trapezoid'")
    terminal = float((u.data[-1] * m_data[-1]).sum() * vol)
    initial = float((problem.m0.values * u.data[0]).sum() * vol)
    return DualityTerms(terminal, excess, coupling, initial)


def duality_gap(u: SpaceTimeField, m: SpaceTimeField, problem: MFGProblem, time_rule: str = "trapezoid") -> float:
    return duality_terms(u, m, problem, time_rule).gap
