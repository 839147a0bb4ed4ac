"""Convex Hamiltonians H(p), their gradients and structural certificates.

All evaluators are vectorised over leading axes: ``p`` has shape ``(..., d)``,
``eval`` returns ``(...)`` and ``grad`` returns ``(..., d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def _norm(p: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.asarray(p, dtype=np.float64) ** 2, axis=-1))


@dataclass(frozen=True)
class Hamiltonian:
    """Base class; subclasses implement ``eval`` and ``grad``."""

    kind = "abstract"

    def eval(self, p):
        raise NotImplementedError

    def grad(self, p):
        raise NotImplementedError

    def legendre_excess(self, p):
        """H_p(p) . p - H(p)."""
        p = np.asarray(p, dtype=np.float64)
        return np.sum(self.grad(p) * p, axis=-1) - self.eval(p)

    @property
    def lipschitz_bound(self) -> float:
        """Global Lipschitz constant of H (``inf`` if H is not Lipschitz)."""
        return math.inf

    def to_config(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class Zero(Hamiltonian):
    kind = "zero"

    def eval(self, p):
        return np.zeros(np.shape(p)[:-1])

    def grad(self, p):
        return np.zeros(np.shape(p))

    @property
    def lipschitz_bound(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Quadratic(Hamiltonian):
    """H(p) = a |p|^2 with structure constants c (excess) and C (growth)."""

    a: float = 1.0
    c: float = 1.0
    C: float = 2.0
    kind = "quadratic"

    def eval(self, p):
        return self.a * np.sum(np.asarray(p, dtype=np.float64) ** 2, axis=-1)

    def grad(self, p):
        return 2.0 * self.a * np.asarray(p, dtype=np.float64)

    def to_config(self) -> dict:
        kind = "half_quadratic" if self.a == 0.5 else self.kind
        return {"kind": kind}


@dataclass(frozen=True)
class SqrtLipschitz(Hamiltonian):
    """H(p) = sqrt(1 + |p|^2) - 1: convex, H(0) = 0, Lipschitz with L_H = 1."""

    kind = "lipschitz"

    def eval(self, p):
        r2 = np.sum(np.asarray(p, dtype=np.float64) ** 2, axis=-1)
        # r2 / (sqrt(1+r2) + 1) avoids cancellation near p = 0
        return r2 / (np.sqrt(1.0 + r2) + 1.0)

    def grad(self, p):
        p = np.asarray(p, dtype=np.float64)
        r2 = np.sum(p**2, axis=-1, keepdims=True)
        return p / np.sqrt(1.0 + r2)

    @property
    def lipschitz_bound(self) -> float:
        return 1.0


@dataclass(frozen=True)
class Abs(Hamiltonian):
    """H(p) = |p|; the subgradient at 0 is fixed to 0."""

    kind = "abs"

    def eval(self, p):
        return _norm(p)

    def grad(self, p):
        p = np.asarray(p, dtype=np.float64)
        r = _norm(p)[..., None]
        return np.divide(p, r, out=np.zeros_like(p), where=r > 0)

    @property
    def lipschitz_bound(self) -> float:
        return 1.0


@dataclass(frozen=True)
class Regularized(Hamiltonian):
    """H_eps = H / (1 + eps sqrt(H)), a Lipschitz approximation of ``base``."""

    base: Hamiltonian = field(default_factory=Quadratic)
    epsilon: float = 0.5
    kind = "regularized"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def eval(self, p):
        h = self.base.eval(p)
        return h / (1.0 + self.epsilon * np.sqrt(h))

    def grad(self, p):
        h = self.base.eval(p)
        s = np.sqrt(h)
        factor = (1.0 + 0.5 * self.epsilon * s) / (1.0 + self.epsilon * s) ** 2
        return self.base.grad(p) * factor[..., None]

    @property
    def lipschitz_bound(self) -> float:
        if isinstance(self.base, Quadratic):
            # |grad| = (sqrt(a)/eps) y(2+y)/(1+y)^2 with y = eps sqrt(a) |p|
            return math.sqrt(self.base.a) / self.epsilon
        return self.base.lipschitz_bound

    def to_config(self) -> dict:
        cfg = self.base.to_config()
        cfg["epsilon"] = self.epsilon
        return cfg


BUILTIN = {
    "zero": Zero,
    "quadratic": Quadratic,
    "half_quadratic": lambda: Quadratic(a=0.5, c=1.0, C=1.0),
    "lipschitz": SqrtLipschitz,
    "abs": Abs,
}


def from_config(cfg: dict) -> Hamiltonian:
    """Build from ``{"kind": ..., "epsilon": eps-or-None}``."""
    kind = cfg.get("kind", "lipschitz")
    if kind not in BUILTIN:
        raise ValueError(f"unknown hamiltonian kind {kind!r}")
    H = BUILTIN[kind]()
    eps = cfg.get("epsilon")
    if eps is not None:
        H = Regularized(H, float(eps))
    return H


def fd_grad(H: Hamiltonian, p: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient; the independent oracle for ``grad``."""
    p = np.asarray(p, dtype=np.float64)
    out = np.empty_like(p)
    for k in range(p.shape[-1]):
        e = np.zeros(p.shape[-1])
        e[k] = step
        out[..., k] = (H.eval(p + e) - H.eval(p - e)) / (2.0 * step)
    return out


@dataclass
class StructureReport:
    """Worst-case margins (min over samples of rhs - lhs); >= 0 means satisfied."""

    margins: dict[str, float]
    n_samples: int
    constants: dict[str, float]

    def violations(self, tol: float = 0.0) -> list[str]:
        return [name for name, m in self.margins.items() if m < -tol]

    def ok(self, names=None, tol: float = 0.0) -> bool:
        names = self.margins if names is None else names
        return all(self.margins[n] >= -tol for n in names)


def check_structure(
    H: Hamiltonian,
    samples: np.ndarray,
    c: float | None = None,
    C: float | None = None,
    grad_sq_constant: float | None = None,
) -> StructureReport:
    """Evaluate the quadratic-class inequalities on a set of momenta.

    Constants default to those carried by the (base) quadratic Hamiltonian;
    ``grad_sq_constant`` (for |H_p|^2 <= K H) defaults to ``2 C``, which is
    exact for H = |p|^2 with C = 2.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    base = H.base if isinstance(H, Regularized) else H
    c = getattr(base, "c", 1.0) if c is None else c
    C = getattr(base, "C", 2.0) if C is None else C
    K = 2.0 * C if grad_sq_constant is None else grad_sq_constant

    h = H.eval(samples)
    g = H.grad(samples)
    gnorm = _norm(g)
    p2 = np.sum(samples**2, axis=-1)
    excess = np.sum(g * samples, axis=-1) - h

    margins = {
        "nonnegative": float(h.min()),
        "growth": float((C * p2 - h).min()),
        "gradient_growth": float((C * np.sqrt(p2) - gnorm).min()),
        "grad_sq": float((K * h - gnorm**2).min()),
    }
    if isinstance(H, Regularized):
        hb = base.eval(samples)
        eps = H.epsilon
        margins["below_base"] = float((hb - h).min())
        margins["excess_ge_value"] = float((excess - h).min())
        margins["excess_ge_c_base"] = float((np.sum(g * samples, axis=-1) - hb - c * hb).min())
        margins["lipschitz"] = float((C / eps - gnorm).min())
        margins["excess_ge_value_damped"] = float((excess - h / (1.0 + eps * np.sqrt(hb))).min())
    else:
        margins["excess"] = float((excess - c * h).min())
    return StructureReport(margins, int(np.prod(samples.shape[:-1])), {"c": c, "C": C, "K": K})


def sample_box(d: int, half_width: float, n: int) -> np.ndarray:
    """Tensor grid of n points per axis over [-half_width, half_width]^d."""
    axis = np.linspace(-half_width, half_width, n)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)
