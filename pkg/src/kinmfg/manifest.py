"""Run manifests: validated JSON documents describing one solve.

Unknown keys are rejected and every validation error carries a JSON pointer
(``/grid/n_x``) to the offending value.  A manifest naming a ``scenario``
starts from that preset and overrides it section by section.
"""
from __future__ import annotations

import copy
import json
import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PField, ValidationError, field_validator

from . import coupling as coupling_mod
from . import hamiltonian as ham_mod
from .grid import Field, GridConfig, PhaseGrid, build_grid, integrate
from .kolmogorov import SCHEMES, OperatorConfig
from .mfg import INITS, MFGConfig, MFGProblem


class ManifestError(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer
        self.message = message


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class GridSection(_Strict):
    d: Literal[1, 2] = 1
    T: float = PField(1.0, gt=0)
    n_t: int = PField(50, ge=1)
    L_x: float = PField(math.pi, gt=0)
    n_x: int = 32
    L_v: float = PField(5.0, gt=0)
    n_v: int = PField(32, ge=4)
    max_cells: int = PField(1 << 24, ge=16)

    @field_validator("n_x")
    @classmethod
    def _pow2(cls, v: int) -> int:
        if v < 4 or v & (v - 1):
            raise ValueError("n_x must be power of two >= 4")
        return v


class HamiltonianSection(_Strict):
    kind: Literal["zero", "quadratic", "half_quadratic", "lipschitz", "abs"] = "lipschitz"
    epsilon: Optional[float] = PField(None, gt=0)


class CouplingSection(_Strict):
    name: Literal["linear", "bump_quadratic", "zero"] = "linear"
    strength: float = PField(1.0, ge=0)
    width: float = PField(1.0, gt=0)


class MFGSection(_Strict):
    damping: float = PField(0.5, gt=0, le=1)
    tol_fixed_point: float = PField(1e-6, gt=0)
    max_iters: int = PField(200, ge=1)
    epsilon_schedule: list[float] = PField(default_factory=list)
    truncation_levels: list[float] = PField(default_factory=lambda: [2.0, 4.0, 8.0])
    init: Literal["kolmogorov", "uniform", "heat"] = "kolmogorov"

    @field_validator("epsilon_schedule")
    @classmethod
    def _decreasing(cls, v: list[float]) -> list[float]:
        if any(e <= 0 for e in v):
            raise ValueError("schedule entries must be positive")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("schedule must be strictly decreasing")
        return v


class InitialSection(_Strict):
    kind: Literal["gaussian"] = "gaussian"
    sigma_x: float = PField(0.5, gt=0)
    sigma_v: float = PField(0.5, gt=0)
    center_x: float = 0.0
    center_v: float = 0.0


class OperatorSection(_Strict):
    fp_transport: Literal[SCHEMES] = "semi_lagrangian"  # type: ignore[valid-type]
    hjb_transport: Literal["semi_lagrangian", "upwind1"] = "semi_lagrangian"
    hjb_scheme: Literal["lax_friedrichs", "upwind_godunov"] = "upwind_godunov"
    cfl_safety: float = PField(0.9, gt=0, le=1)


class RunManifest(_Strict):
    scenario: Optional[str] = None
    grid: GridSection = PField(default_factory=GridSection)
    hamiltonian: HamiltonianSection = PField(default_factory=HamiltonianSection)
    coupling: CouplingSection = PField(default_factory=CouplingSection)
    mfg: MFGSection = PField(default_factory=MFGSection)
    initial: InitialSection = PField(default_factory=InitialSection)
    operator: OperatorSection = PField(default_factory=OperatorSection)
    seed: int = PField(0, ge=0)
    output_dir: str = "kinmfg-out"


PRESETS: dict[str, dict] = {
    "decoupled-kolmogorov": {
        "grid": {"n_x": 32, "n_v": 32, "n_t": 50, "L_v": 5.0},
        "hamiltonian": {"kind": "zero"},
        "coupling": {"name": "zero"},
    },
    "lipschitz-linear-coupling": {
        "grid": {"n_x": 32, "n_v": 32, "n_t": 50, "L_v": 5.0},
        "hamiltonian": {"kind": "lipschitz"},
        "coupling": {"name": "linear", "strength": 1.0},
        "mfg": {"tol_fixed_point": 1e-8},
    },
    "quadratic-continuation": {
        "grid": {"n_x": 32, "n_v": 32, "n_t": 50, "L_v": 4.0},
        "hamiltonian": {"kind": "quadratic"},
        "coupling": {"name": "linear", "strength": 2.0},
        "mfg": {"tol_fixed_point": 1e-9, "epsilon_schedule": [0.5, 0.25, 0.125, 0.0625]},
        "initial": {"sigma_x": 0.3, "sigma_v": 0.18},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _pointer(loc) -> str:
    return "/" + "/".join(str(p) for p in loc)


def manifest_from_dict(doc: dict) -> RunManifest:
    if not isinstance(doc, dict):
        raise ManifestError("", "manifest must be a JSON object")
    scenario = doc.get("scenario")
    if scenario is not None:
        if scenario not in PRESETS:
            raise ManifestError("/scenario", f"unknown scenario {scenario!r}; choose from {sorted(PRESETS)}")
        doc = _merge(PRESETS[scenario], doc)
    try:
        return RunManifest.model_validate(doc)
    except ValidationError as exc:
        err = exc.errors()[0]
        msg = err["msg"].removeprefix("Value error, ")
        raise ManifestError(_pointer(err["loc"]), msg) from None


def parse_manifest(text: str) -> RunManifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError("", f"malformed JSON: {exc}") from None
    return manifest_from_dict(doc)


def echo(manifest: RunManifest) -> str:
    """Canonical JSON with every default spelled out."""
    return json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True)


def preset(name: str, **sections) -> RunManifest:
    return manifest_from_dict({"scenario": name, **sections})


# --------------------------------------------------------------------------
# construction of solver objects
# --------------------------------------------------------------------------
def build_problem(manifest: RunManifest) -> tuple[MFGProblem, MFGConfig]:
    g = manifest.grid
    grid = build_grid(GridConfig(g.d, g.T, g.n_t, g.L_x, g.n_x, g.L_v, g.n_v, g.max_cells))
    H = ham_mod.from_config(manifest.hamiltonian.model_dump())
    c = manifest.coupling
    if c.name == "linear":
        cpl = coupling_mod.linear(c.strength)
    elif c.name == "bump_quadratic":
        cpl = coupling_mod.bump_quadratic(c.strength, c.width)
    else:
        cpl = coupling_mod.zero()
    m0 = gaussian_density(grid, manifest.initial)
    op = manifest.operator
    problem = MFGProblem(
        grid,
        H,
        cpl,
        m0,
        fp_operator=OperatorConfig(op.fp_transport, True, op.cfl_safety),
        hjb_operator=OperatorConfig(op.hjb_transport, True, op.cfl_safety),
        hjb_scheme=op.hjb_scheme,
    )
    m = manifest.mfg
    cfg = MFGConfig(m.damping, m.tol_fixed_point, m.max_iters, tuple(m.epsilon_schedule), tuple(m.truncation_levels), m.init)
    return problem, cfg


def gaussian_density(grid: PhaseGrid, spec: InitialSection | None = None) -> Field:
    """Periodised-in-x Gaussian normalised to unit discrete mass."""
    spec = spec or InitialSection()
    out = np.ones(grid.shape)
    for xk, vk in zip(grid.x_components(), grid.v_components()):
        dx = (xk - spec.center_x + grid.L_x) % (2.0 * grid.L_x) - grid.L_x
        out *= np.exp(-0.5 * (dx / spec.sigma_x) ** 2 - 0.5 * ((vk - spec.center_v) / spec.sigma_v) ** 2)
    out /= integrate(out, grid)
    return Field(grid, out)


__all__ = [
    "ManifestError",
    "RunManifest",
    "PRESETS",
    "parse_manifest",
    "manifest_from_dict",
    "echo",
    "preset",
    "build_problem",
    "gaussian_density",
    "INITS",
]
