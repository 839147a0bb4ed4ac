"""Backward solver for  -d_t u - Delta_v u + v.D_x u + H(D_v u) = F,  u(T) = G.

One backward step n+1 -> n (Strang):

1. half transport ``u(x) <- u(x - v dt/2)`` (linear semi-Lagrangian, monotone);
2. explicit monotone Hamiltonian update ``u <- u - dt Hhat(D_v^- u, D_v^+ u) + dt F^n``
   (sub-cycled when ``dt * sum(alpha) / h_v`` exceeds the safety factor).
   ``Hhat`` is either local Lax-Friedrichs or Rouy-Tourin (Godunov) upwinding
   for Hamiltonians that depend on |p| only;
3. implicit Neumann heat step in v;
4. half transport.

Every sub-step is monotone and maps constants to constants, so the scheme
obeys a discrete comparison principle and the bound
``||u||_inf <= ||G||_inf + T ||F||_inf`` for ``H >= 0, H(0) = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Field, PhaseGrid, SpaceTimeField, lp_norm
from .hamiltonian import Hamiltonian
from .kolmogorov import CFLError, OperatorConfig, transport_raw, v_step_raw

HJB_SCHEMES = ("lax_friedrichs", "upwind_godunov")


class HJBError(RuntimeError):
    """Non-finite values during the backward march."""


@dataclass(frozen=True)
class HJBProblem:
    grid: PhaseGrid
    H: Hamiltonian
    F_field: SpaceTimeField
    G_field: Field
    scheme: str = "lax_friedrichs"
    operator: OperatorConfig = field(default_factory=lambda: OperatorConfig(transport_scheme="semi_lagrangian"))
    hamiltonian_safety: float = 0.9
    max_subcycles: int = 4096

    def __post_init__(self):
        if self.scheme not in HJB_SCHEMES:
            raise ValueError(f"scheme must be one of {HJB_SCHEMES}")
        if not (self.F_field.grid.compatible(self.grid) and self.G_field.grid.compatible(self.grid)):
            raise ValueError("F_field and G_field must live on the problem grid")
        if self.F_field.grid.n_t != self.grid.n_t:
            raise ValueError("F_field must have n_t + 1 time levels")


# --------------------------------------------------------------------------
# velocity differences
# --------------------------------------------------------------------------
def one_sided_v(values: np.ndarray, grid: PhaseGrid) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward v-differences, shape ``grid.shape + (d,)``.

    Neumann ghost cells make both vanish across the outer walls.
    """
    d = grid.d
    phase = grid.phase(values)
    minus = np.zeros(grid.phase_shape + (d,))
    plus = np.zeros(grid.phase_shape + (d,))
    for k in range(d):
        axis = d + k
        diff = np.diff(phase, axis=axis) / grid.h_v
        lead = [slice(None)] * (2 * d)
        tail = [slice(None)] * (2 * d)
        lead[axis] = slice(1, None)
        tail[axis] = slice(None, -1)
        minus[tuple(lead) + (k,)] = diff
        plus[tuple(tail) + (k,)] = diff
    return grid.flat(minus), grid.flat(plus)


def gradient_v_raw(values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Centred differences inside, one-sided at the v walls."""
    d = grid.d
    phase = grid.phase(values)
    out = np.empty(grid.phase_shape + (d,))
    for k in range(d):
        out[..., k] = np.gradient(phase, grid.h_v, axis=d + k, edge_order=1)
    return grid.flat(out)


def discrete_gradient_v(u: Field) -> Field:
    return Field(u.grid, gradient_v_raw(u.values, u.grid))


# --------------------------------------------------------------------------
# numerical Hamiltonians
# --------------------------------------------------------------------------
def _max_speed(H: Hamiltonian, *ps: np.ndarray) -> np.ndarray:
    """Per-component max |H_p| over the supplied momentum samples."""
    return np.max([np.abs(H.grad(p)).reshape(-1, p.shape[-1]).max(axis=0) for p in ps], axis=0)


def lax_friedrichs(H: Hamiltonian, pm: np.ndarray, pp: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return H.eval(0.5 * (pm + pp)) - np.sum(0.5 * alpha * (pp - pm), axis=-1)


def godunov_radial(H: Hamiltonian, pm: np.ndarray, pp: np.ndarray) -> np.ndarray:
    """Rouy-Tourin upwinding; exact Godunov flux for H nondecreasing in |p|."""
    q = np.maximum(np.maximum(pm, 0.0), -np.minimum(pp, 0.0))
    return H.eval(q)


def dissipation(H: Hamiltonian, pm: np.ndarray, pp: np.ndarray, d: int) -> np.ndarray:
    """LF constant: the global Lipschitz bound when finite, else the sampled max |H_p|."""
    lip = H.lipschitz_bound
    if math.isfinite(lip):
        return np.full(d, lip)
    return _max_speed(H, pm, pp, 0.5 * (pm + pp))


def hamiltonian_update(
    u: np.ndarray, grid: PhaseGrid, dt: float, H: Hamiltonian, scheme: str, safety: float, max_sub: int
) -> tuple[np.ndarray, int]:
    """Advance ``u <- u - dt Hhat`` with explicit sub-cycling; returns (u, substeps)."""
    pm, pp = one_sided_v(u, grid)
    if scheme == "lax_friedrichs":
        alpha = dissipation(H, pm, pp, grid.d)
    elif math.isfinite(H.lipschitz_bound):
        # a data-independent sub-cycle count keeps the composed step monotone
        alpha = np.full(grid.d, H.lipschitz_bound)
    else:
        alpha = _max_speed(H, pm, pp)
    rate = float(np.sum(alpha)) / grid.h_v
    n_sub = max(1, math.ceil(dt * rate / safety)) if rate > 0 else 1
    if n_sub > max_sub:
        raise CFLError(
            f"Hamiltonian step needs {n_sub} sub-cycles (> {max_sub}); reduce dt below {safety * max_sub / rate:.3g}"
        )
    tau = dt / n_sub
    for i in range(n_sub):
        if i:
            pm, pp = one_sided_v(u, grid)
        if scheme == "lax_friedrichs":
            if i and not math.isfinite(H.lipschitz_bound):
                # keep the sub-step monotone if gradients grew
                alpha = np.maximum(alpha, _max_speed(H, pm, pp, 0.5 * (pm + pp)))
            hhat = lax_friedrichs(H, pm, pp, alpha)
        else:
            hhat = godunov_radial(H, pm, pp)
        u = u - tau * hhat
    return u, n_sub


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------
@dataclass
class HJBResult:
    u: SpaceTimeField
    substeps: list[int]

    def __iter__(self):  # allows ``u, info = ...`` unpacking style in scripts
        return iter((self.u, self.substeps))


def hjb_step_raw(u_next, grid, dt, H, F_n, scheme, op, safety, max_sub):
    u = transport_raw(u_next, grid, 0.5 * dt, +1, op)
    u, n_sub = hamiltonian_update(u, grid, dt, H, scheme, safety, max_sub)
    u = u + dt * F_n
    u = v_step_raw(u, grid, dt, None, "hjb", op)
    return transport_raw(u, grid, 0.5 * dt, +1, op), n_sub


def solve_hjb_full(prob: HJBProblem) -> HJBResult:
    grid = prob.grid
    n_t = grid.n_t
    out = np.empty((n_t + 1,) + grid.shape)
    out[n_t] = prob.G_field.values
    F = prob.F_field.data
    subs = []
    for n in range(n_t - 1, -1, -1):
        u, n_sub = hjb_step_raw(
            out[n + 1], grid, grid.dt, prob.H, F[n], prob.scheme, prob.operator, prob.hamiltonian_safety, prob.max_subcycles
        )
        if not np.all(np.isfinite(u)):
            raise HJBError(f"non-finite value function at time level {n} (t = {n * grid.dt:.6g})")
        out[n] = u
        subs.append(n_sub)
    return HJBResult(SpaceTimeField(grid, out), subs[::-1])


def solve_hjb(prob: HJBProblem) -> SpaceTimeField:
    """March backward from ``u(T) = G``; returns all time levels."""
    return solve_hjb_full(prob).u


def drift_from_value(u: SpaceTimeField, H: Hamiltonian) -> np.ndarray:
    """b = H_p(D_v u) on every level, shape ``(n_t + 1,) + grid.shape + (d,)``."""
    grid = u.grid
    return np.stack([H.grad(gradient_v_raw(level, grid)) for level in u.data])


# --------------------------------------------------------------------------
# norms
# --------------------------------------------------------------------------
@dataclass
class HJBNormReport:
    sup_u_l2: float
    grad_v_l2: float
    F_l2: float
    G_l2: float
    stability_ratio: float
    uH_l1: float
    blowup_profile: list[float]

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def hjb_norm_report(u: SpaceTimeField, F_field: SpaceTimeField, G_field: Field, H: Hamiltonian | None = None) -> HJBNormReport:
    grid = u.grid
    sup_u = max(lp_norm(level, 2) for level in u)
    grads = np.stack([gradient_v_raw(level, grid) for level in u.data])
    grad_l2 = lp_norm(SpaceTimeField(grid, grads), 2)
    F2 = lp_norm(F_field, 2)
    G2 = lp_norm(G_field, 2)
    denom = F2 + G2
    ratio = sup_u / denom if denom > 0 else (0.0 if sup_u == 0 else math.inf)
    if H is not None:
        uH = np.abs(u.data) * np.stack([H.eval(g) for g in grads])
        uH_l1 = lp_norm(SpaceTimeField(grid, uH), 1)
    else:
        uH_l1 = 0.0
    # ||Delta_v u(t)||_2 (T - t): monitored, not asserted
    profile = []
    for k, level in enumerate(u.data):
        lap = np.zeros(grid.shape)
        for comp in range(grid.d):
            g = gradient_v_raw(grads[k][..., comp], grid)[..., comp]
            lap = lap + g
        profile.append(lp_norm(Field(grid, lap), 2) * (grid.T - grid.times[k]))
    return HJBNormReport(sup_u, grad_l2, F2, G2, ratio, uH_l1, profile)
