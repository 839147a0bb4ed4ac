"""Uniform phase-space grid, field containers, quadrature and norms.

Positions live on a periodic box ``[-L_x, L_x)^d`` sampled at nodes
``x_i = -L_x + i h_x``; velocities on a truncated box ``[-L_v, L_v]^d`` sampled
at cell centres ``v_j = -L_v + (j + 1/2) h_v``.  A scalar field on one time
slice is stored as an array of shape ``(n_x**d, n_v**d)`` (position index
major, both blocks in C order); :meth:`PhaseGrid.phase` reshapes it to the
full tensor ``(n_x,)*d + (n_v,)*d``.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

DEFAULT_MAX_CELLS = 1 << 24
CHECKPOINT_MAGIC = b"KMFG1"
_HEADER = struct.Struct("<IIIdd")

WEIGHTS = ("x2", "v2", "v4", "x2v2", "entropy")


class GridError(ValueError):
    """Invalid grid configuration or incompatible grids."""


@dataclass(frozen=True)
class GridConfig:
    d: int = 1
    T: float = 1.0
    n_t: int = 100
    L_x: float = math.pi
    n_x: int = 64
    L_v: float = 4.0
    n_v: int = 64
    max_cells: int = DEFAULT_MAX_CELLS


@dataclass(frozen=True)
class PhaseGrid:
    d: int
    T: float
    n_t: int
    L_x: float
    n_x: int
    L_v: float
    n_v: int

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def h_x(self) -> float:
        return 2.0 * self.L_x / self.n_x

    @property
    def h_v(self) -> float:
        return 2.0 * self.L_v / self.n_v

    @property
    def cell_volume(self) -> float:
        return (self.h_x * self.h_v) ** self.d

    @property
    def volume(self) -> float:
        return (4.0 * self.L_x * self.L_v) ** self.d

    @property
    def n_cells(self) -> int:
        return self.n_x**self.d * self.n_v**self.d

    @property
    def shape(self) -> tuple[int, int]:
        """Storage shape of one scalar slice."""
        return (self.n_x**self.d, self.n_v**self.d)

    @property
    def phase_shape(self) -> tuple[int, ...]:
        return (self.n_x,) * self.d + (self.n_v,) * self.d

    @property
    def x(self) -> np.ndarray:
        return -self.L_x + self.h_x * np.arange(self.n_x)

    @property
    def v(self) -> np.ndarray:
        return -self.L_v + self.h_v * (np.arange(self.n_v) + 0.5)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_t + 1)

    def time_weights(self) -> np.ndarray:
        """Trapezoidal weights over the ``n_t + 1`` time levels."""
        w = np.full(self.n_t + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def phase(self, values: np.ndarray) -> np.ndarray:
        """Reshape storage-layout values (optionally with a trailing component axis)."""
        extra = values.shape[2:] if values.ndim > 2 else ()
        return values.reshape(self.phase_shape + extra)

    def flat(self, values: np.ndarray) -> np.ndarray:
        extra = values.shape[2 * self.d :]
        return values.reshape(self.shape + extra)

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Broadcastable (x_1..x_d, v_1..v_d) arrays on the phase tensor."""
        axes = [self.x] * self.d + [self.v] * self.d
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def x_components(self) -> list[np.ndarray]:
        return [self.flat(c) for c in self.coordinates()[: self.d]]

    def v_components(self) -> list[np.ndarray]:
        return [self.flat(c) for c in self.coordinates()[self.d :]]

    def sq_x(self) -> np.ndarray:
        return sum(c**2 for c in self.x_components())

    def sq_v(self) -> np.ndarray:
        return sum(c**2 for c in self.v_components())

    def compatible(self, other: "PhaseGrid") -> bool:
        return (self.d, self.n_x, self.n_v, self.L_x, self.L_v) == (
            other.d,
            other.n_x,
            other.n_v,
            other.L_x,
            other.L_v,
        )

    def field(self, values) -> "Field":
        return Field(self, values)

    def constant(self, value: float) -> "Field":
        return Field(self, np.full(self.shape, float(value)))

    def zeros_in_time(self) -> "SpaceTimeField":
        return SpaceTimeField(self, np.zeros((self.n_t + 1,) + self.shape))


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def build_grid(cfg: GridConfig) -> PhaseGrid:
    if cfg.d not in (1, 2):
        raise GridError("d must be 1 or 2")
    if not (cfg.T > 0 and cfg.L_x > 0 and cfg.L_v > 0):
        raise GridError("T, L_x and L_v must be positive")
    if cfg.n_t < 1:
        raise GridError("n_t must be >= 1")
    if cfg.n_x < 4 or not _is_power_of_two(cfg.n_x):
        raise GridError("n_x must be power of two >= 4")
    if cfg.n_v < 4:
        raise GridError("n_v must be >= 4")
    cells = cfg.n_x**cfg.d * cfg.n_v**cfg.d
    if cells > cfg.max_cells:
        raise GridError(f"grid has {cells} cells, exceeding the budget of {cfg.max_cells}")
    return PhaseGrid(cfg.d, float(cfg.T), int(cfg.n_t), float(cfg.L_x), int(cfg.n_x), float(cfg.L_v), int(cfg.n_v))


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Field:
    """One time slice; ``values`` has shape ``grid.shape`` or ``grid.shape + (d,)``."""

    grid: PhaseGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape[:2] != self.grid.shape or vals.ndim > 3:
            raise GridError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise GridError("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def phase(self) -> np.ndarray:
        return self.grid.phase(self.values)

    def __add__(self, other):
        return Field(self.grid, self.values + _raw(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - _raw(other))

    def __mul__(self, other):
        return Field(self.grid, self.values * _raw(other))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """All ``n_t + 1`` time levels; ``data[k]`` is the storage array of level k."""

    grid: PhaseGrid
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _frozen(self.data)
        if arr.shape[0] != self.grid.n_t + 1 or arr.shape[1:3] != self.grid.shape:
            raise GridError(f"space-time shape {arr.shape} does not match grid")
        if not np.all(np.isfinite(arr)):
            raise GridError("space-time field contains non-finite values")
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_slices(cls, grid: PhaseGrid, slices: Sequence) -> "SpaceTimeField":
        return cls(grid, np.stack([_raw(s) for s in slices]))

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, k: int) -> Field:
        return Field(self.grid, self.data[k])

    def __iter__(self) -> Iterator[Field]:
        return (self[k] for k in range(len(self)))

    @property
    def slices(self) -> list[Field]:
        return list(self)

    def __sub__(self, other):
        return SpaceTimeField(self.grid, self.data - _raw(other))

    def __add__(self, other):
        return SpaceTimeField(self.grid, self.data + _raw(other))


def _raw(obj):
    if isinstance(obj, Field):
        return obj.values
    if isinstance(obj, SpaceTimeField):
        return obj.data
    return obj


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------
def integrate(f: Field | np.ndarray, grid: PhaseGrid | None = None) -> float:
    """Midpoint quadrature of one slice: sum(values) * h_x^d * h_v^d."""
    grid = f.grid if isinstance(f, Field) else grid
    vals = _raw(f)
    return float(np.sum(vals) * grid.cell_volume)


def integrate_spacetime(f: SpaceTimeField) -> float:
    per_level = f.data.reshape(len(f), -1).sum(axis=1) * f.grid.cell_volume
    return float(per_level @ f.grid.time_weights())


def entropy_density(values: np.ndarray) -> np.ndarray:
    vals = np.asarray(values)
    if np.any(vals < 0):
        raise ValueError("entropy weight requires a nonnegative field")
    out = np.zeros_like(vals, dtype=np.float64)
    pos = vals > 0
    out[pos] = vals[pos] * np.log(vals[pos])
    return out


def moment(f: Field, w: str) -> float:
    """Quadrature of weight * f for weight in ``WEIGHTS``; ``entropy`` is m log m."""
    grid = f.grid
    vals = f.values
    if w == "x2":
        integrand = grid.sq_x() * vals
    elif w == "v2":
        integrand = grid.sq_v() * vals
    elif w == "v4":
        integrand = grid.sq_v() ** 2 * vals
    elif w == "x2v2":
        integrand = (grid.sq_x() + grid.sq_v()) * vals
    elif w == "entropy":
        integrand = entropy_density(vals)
    else:
        raise ValueError(f"unknown weight {w!r}; expected one of {WEIGHTS}")
    return float(np.sum(integrand) * grid.cell_volume)


def lp_norm(f: Field | SpaceTimeField, p: float) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    vals = np.abs(_raw(f))
    if vals.ndim == (3 if isinstance(f, SpaceTimeField) else 2) + 1:
        vals = np.sqrt(np.sum(vals**2, axis=-1))
    if math.isinf(p):
        return float(vals.max(initial=0.0))
    grid = f.grid
    if isinstance(f, SpaceTimeField):
        per_level = (vals**p).reshape(len(f), -1).sum(axis=1) * grid.cell_volume
        total = per_level @ grid.time_weights()
    else:
        total = np.sum(vals**p) * grid.cell_volume
    return float(total ** (1.0 / p))


def sup_in_time(f: SpaceTimeField, p: float) -> float:
    return max(lp_norm(s, p) for s in f)


def fractional_seminorm(f: Field | SpaceTimeField, s: float, axis: str = "x") -> float:
    """Spectral estimate of the L^2 norm of |D|^s f along ``axis``.

    ``axis="x"`` transforms over the periodic position axes with physical
    wavenumbers ``pi j / L_x``.  ``axis="t"`` even-reflects the time levels
    and transforms over the doubled period; it is an estimator, not an exact
    norm.  Remaining axes are integrated with the grid quadrature.
    """
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0, 1)")
    grid = f.grid
    if axis == "x":
        arr = grid.phase(f.values) if isinstance(f, Field) else f.data.reshape((len(f),) + grid.phase_shape)
        lead = 0 if isinstance(f, Field) else 1
        x_axes = tuple(range(lead, lead + grid.d))
        spec = np.fft.fftn(arr, axes=x_axes)
        k1 = 2.0 * np.pi * np.fft.fftfreq(grid.n_x, d=grid.h_x)
        ks = np.meshgrid(*([k1] * grid.d), indexing="ij")
        kmag = np.sqrt(sum(k**2 for k in ks))
        shape = [1] * arr.ndim
        for i, ax in enumerate(x_axes):
            shape[ax] = grid.n_x
        weight = (kmag ** (2 * s)).reshape(shape)
        n_modes = grid.n_x**grid.d
        dens = weight * np.abs(spec) ** 2 / n_modes * grid.h_x**grid.d * grid.h_v**grid.d
        if isinstance(f, Field):
            return float(np.sqrt(dens.sum()))
        per_level = dens.reshape(len(f), -1).sum(axis=1)
        return float(np.sqrt(per_level @ grid.time_weights()))
    if axis == "t":
        if not isinstance(f, SpaceTimeField):
            raise ValueError("axis='t' needs a SpaceTimeField")
        data = f.data.reshape(len(f), -1)
        ext = np.concatenate([data, data[-2:0:-1]], axis=0)
        n_ext = ext.shape[0]
        spec = np.fft.fft(ext, axis=0)
        k = 2.0 * np.pi * np.fft.fftfreq(n_ext, d=grid.dt)
        dens = (np.abs(k) ** (2 * s))[:, None] * np.abs(spec) ** 2 / n_ext * grid.dt
        # half of the reflected period is [0, T]
        return float(np.sqrt(0.5 * dens.sum() * grid.cell_volume))
    raise ValueError("axis must be 'x' or 't'")


def boundary_mass(f: Field, layers: int = 1) -> float:
    """Mass carried by the outermost ``layers`` velocity cells on any v-axis."""
    grid = f.grid
    arr = np.abs(grid.phase(f.values))
    mask = np.zeros(grid.phase_shape, dtype=bool)
    for k in range(grid.d):
        sl = [slice(None)] * (2 * grid.d)
        sl[grid.d + k] = np.r_[0:layers, grid.n_v - layers : grid.n_v]
        mask[tuple(sl)] = True
    return float(arr[mask].sum() * grid.cell_volume)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------
def write_checkpoint(path: str | Path, f: Field | SpaceTimeField) -> None:
    """Binary checkpoint: magic, header (d, n_x, n_v, L_x, L_v), row-major doubles.

    A space-time field is written as its levels back to back; the level count
    follows from the payload size.
    """
    grid = f.grid
    payload = np.ascontiguousarray(_raw(f), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_HEADER.pack(grid.d, grid.n_x, grid.n_v, grid.L_x, grid.L_v))
        fh.write(payload.tobytes(order="C"))


def read_checkpoint(path: str | Path, T: float | None = None) -> Field | SpaceTimeField:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise GridError(f"{path}: not a KMFG1 checkpoint")
    off = len(CHECKPOINT_MAGIC)
    d, n_x, n_v, L_x, L_v = _HEADER.unpack_from(raw, off)
    values = np.frombuffer(raw, dtype="<f8", offset=off + _HEADER.size).astype(np.float64)
    cells = n_x**d * n_v**d
    if values.size % cells:
        raise GridError(f"{path}: payload is not a whole number of slices")
    levels = values.size // cells
    shape = (n_x**d, n_v**d)
    if levels == 1:
        grid = PhaseGrid(d, T or 1.0, 1, L_x, n_x, L_v, n_v)
        return Field(grid, values.reshape(shape))
    grid = PhaseGrid(d, T or float(levels - 1), levels - 1, L_x, n_x, L_v, n_v)
    return SpaceTimeField(grid, values.reshape((levels,) + shape))


def write_csv(path: str | Path, f: Field) -> None:
    grid = f.grid
    coords = [c.ravel() for c in grid.coordinates()]
    names = [f"x{i + 1}" for i in range(grid.d)] + [f"v{i + 1}" for i in range(grid.d)]
    if grid.d == 1:
        names = ["x", "v"]
    vals = f.values.ravel()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["value"])
        for row in zip(*coords, vals):
            writer.writerow([repr(float(c)) for c in row])
