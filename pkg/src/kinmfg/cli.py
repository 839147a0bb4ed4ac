"""Command line entry point.

    kinmfg solve <manifest.json> [--out DIR]
    kinmfg solve --preset NAME [--out DIR]
    kinmfg diagnose <checkpoint> [--suite all] [--T 1.0]
    kinmfg compare <a> <b>
    kinmfg oracle kolmogorov --t T [--n-x N --n-v N --L-x L --L-v L --out FILE]

Failures print one JSON object ``{"status": "error", "reason": ...}`` to
stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._accel import apply_thread_limit, backend_name
from .grid import (
    Field,
    GridConfig,
    GridError,
    SpaceTimeField,
    build_grid,
    read_checkpoint,
    write_checkpoint,
    write_csv,
)
from .hamiltonian import Quadratic
from .manifest import PRESETS, ManifestError, RunManifest, build_problem, echo, parse_manifest, preset
from .mfg import MFGDivergence, epsilon_continuation, solve_mfg

log = logging.getLogger("kinmfg")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SOLVER = 4
EXIT_NOT_CONVERGED = 5
EXIT_INVARIANT = 6

SUITES = ("all", "mass", "entropy", "moments", "tails", "renorm", "degiorgi", "regularity")


@dataclass
class RunOutcome:
    exit_code: int
    reason: str
    summary: dict


def _fail(code: int, reason: str, detail: str) -> RunOutcome:
    return RunOutcome(code, reason, {"status": "error", "reason": reason, "detail": detail})


def _prepare_dir(path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write-test"
    probe.write_bytes(b"")
    probe.unlink()


def _hard_invariants(m: SpaceTimeField, leakage: float = 0.0) -> dict[str, bool]:
    mass = m.data.reshape(len(m), -1).sum(axis=1) * m.grid.cell_volume
    return {
        "mass": bool(np.all(np.abs(mass - 1.0) <= 1e-10 + leakage)),
        "positivity": bool(m.data.min() >= 0.0),
    }


def run(manifest: RunManifest, out_dir: str | Path | None = None) -> RunOutcome:
    """Solve the manifest's problem and write checkpoints, CSVs and a JSON summary."""
    out = Path(out_dir if out_dir is not None else manifest.output_dir)
    try:
        _prepare_dir(out)
        (out / "manifest.json").write_text(echo(manifest))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    try:
        problem, cfg = build_problem(manifest)
    except (GridError, ValueError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))

    raw_quadratic = isinstance(problem.H, Quadratic)
    summary: dict = {"scenario": manifest.scenario, "backend": backend_name()}
    try:
        if raw_quadratic:
            if not cfg.epsilon_schedule:
                return _fail(EXIT_CONFIG, "config", "quadratic Hamiltonian needs mfg.epsilon_schedule")
            cont = epsilon_continuation(cfg, problem)
            if cont.error:
                return _fail(EXIT_SOLVER, "solver", cont.error)
            sols = cont.solutions
            summary["continuation"] = {
                "epsilon": [lvl.epsilon for lvl in cont.levels],
                "drift_energy": [lvl.drift_energy for lvl in cont.levels],
                "cauchy_m": cont.cauchy_m,
                "cauchy_u": cont.cauchy_u,
                "cauchy_trunc_grad": cont.cauchy_trunc_grad,
            }
            tagged = [(f"eps{lvl.epsilon:g}", lvl.solution) for lvl in cont.levels]
        else:
            sol = solve_mfg(cfg, problem)
            sols = [sol]
            tagged = [("", sol)]
    except MFGDivergence as exc:
        return _fail(EXIT_SOLVER, "diverged", f"{exc}; history={exc.history}")
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        return _fail(EXIT_SOLVER, "solver", str(exc))

    from .diagnostics import run_diagnostics

    summary["levels"] = []
    all_ok = True
    converged = True
    try:
        for tag, sol in tagged:
            suffix = f"_{tag}" if tag else ""
            H = problem.H if not raw_quadratic else None
            prob = problem if H is not None else problem.with_hamiltonian(_regularized(problem.H, sol.epsilon))
            rep = run_diagnostics(sol, prob, cfg)
            write_checkpoint(out / f"u{suffix}.kmfg", sol.u)
            write_checkpoint(out / f"m{suffix}.kmfg", sol.m)
            rep.write_csv(out / f"diagnostics{suffix}")
            hard = _hard_invariants(sol.m)
            all_ok &= all(hard.values())
            converged &= sol.converged
            summary["levels"].append(
                {
                    "tag": tag or "main",
                    "epsilon": sol.epsilon,
                    "status": sol.status,
                    "iterations": sol.iterations,
                    "final_residual": sol.residual_history[-1],
                    "hard_invariants": hard,
                    **rep.summary(),
                }
            )
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))

    if not converged:
        code, reason = EXIT_NOT_CONVERGED, "max_iters"
    elif not all_ok:
        code, reason = EXIT_INVARIANT, "invariant"
    else:
        code, reason = EXIT_OK, "ok"
    summary["status"] = "ok" if code == EXIT_OK else "error"
    summary["reason"] = reason
    try:
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    return RunOutcome(code, reason, summary)


def _regularized(H, eps):
    from .hamiltonian import Regularized

    return Regularized(H, eps)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


# --------------------------------------------------------------------------
def compare(path_a: str | Path, path_b: str | Path) -> dict:
    """Per-level L1, L2 and L-infinity distances between two checkpoints."""
    a = read_checkpoint(path_a)
    b = read_checkpoint(path_b)
    if not a.grid.compatible(b.grid):
        raise GridError("checkpoints live on different grids")
    da = a.data if isinstance(a, SpaceTimeField) else a.values[None]
    db = b.data if isinstance(b, SpaceTimeField) else b.values[None]
    if da.shape != db.shape:
        raise GridError(f"level counts differ: {da.shape[0]} vs {db.shape[0]}")
    diff = np.abs(da - db).reshape(da.shape[0], -1)
    vol = a.grid.cell_volume
    l1 = diff.sum(axis=1) * vol
    l2 = np.sqrt((diff**2).sum(axis=1) * vol)
    linf = diff.max(axis=1)
    return {
        "levels": int(da.shape[0]),
        "l1": l1.tolist(),
        "l2": l2.tolist(),
        "linf": linf.tolist(),
        "sup_l1": float(l1.max()),
        "sup_l2": float(l2.max()),
        "sup_linf": float(linf.max()),
    }


def diagnose(path: str | Path, suite: str = "all", T: float = 1.0) -> dict:
    from . import diagnostics as dg
    from .fp import de_giorgi_levels

    f = read_checkpoint(path, T=T)
    if isinstance(f, Field):
        raise GridError("diagnose needs a space-time checkpoint")
    m = f
    out: dict = {}
    if suite in ("all", "mass"):
        mass = m.data.reshape(len(m), -1).sum(axis=1) * m.grid.cell_volume
        out["mass_max_error"] = float(np.abs(mass - 1.0).max())
        out["min_value"] = float(m.data.min())
    if suite in ("all", "entropy"):
        e = dg.entropy_check(m, None)
        out["entropy"] = e.entropy.tolist()
        out["entropy_ok"] = e.ok
    if suite in ("all", "moments"):
        out["moments"] = {k: v.tolist() for k, v in dg.moment_series(m).items()}
    if suite in ("all", "tails"):
        t = dg.tail_check(m)
        out["tails"] = {f"R{R:g}": v for R, v in t.tails.items()}
        out["tails_ok"] = t.ok
    if suite in ("all", "renorm"):
        out["renorm_residual"] = {f"n{n:g}": dg.renorm_residual(m, n) for n in (2.0, 4.0, 8.0)}
    if suite in ("all", "degiorgi"):
        sup = float(m.data.max())
        lv = de_giorgi_levels(m, 6, scale=max(sup, 1e-300) / 3.0)
        out["de_giorgi"] = {"alpha": lv.alphas.tolist(), "U": lv.U.tolist()}
    if suite in ("all", "regularity"):
        out["regularity"] = dg.regularity_report(m)
    return out


def oracle_kolmogorov(t: float, n_x: int, n_v: int, L_x: float, L_v: float, sign: int, out: str | Path) -> Path:
    from .kolmogorov import kolmogorov_fundamental

    grid = build_grid(GridConfig(d=1, T=t, n_t=1, L_x=L_x, n_x=n_x, L_v=L_v, n_v=n_v))
    f = Field(grid, kolmogorov_fundamental(grid, t, sign))
    out = Path(out)
    if out.suffix == ".csv":
        write_csv(out, f)
    else:
        write_checkpoint(out, f)
    return out


# --------------------------------------------------------------------------
def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kinmfg", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a manifest or preset")
    s.add_argument("manifest", nargs="?", help="path to a JSON manifest")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--out", help="output directory (overrides the manifest)")
    s.add_argument("--echo", action="store_true", help="print the validated manifest and exit")

    d = sub.add_parser("diagnose", help="density diagnostics of a space-time checkpoint")
    d.add_argument("checkpoint")
    d.add_argument("--suite", choices=SUITES, default="all")
    d.add_argument("--T", type=float, default=1.0, help="final time of the checkpoint")

    c = sub.add_parser("compare", help="distances between two checkpoints")
    c.add_argument("a")
    c.add_argument("b")

    o = sub.add_parser("oracle", help="closed-form reference fields")
    o.add_argument("which", choices=["kolmogorov"])
    o.add_argument("--t", type=float, required=True)
    o.add_argument("--n-x", type=int, default=64)
    o.add_argument("--n-v", type=int, default=64)
    o.add_argument("--L-x", type=float, default=math.pi)
    o.add_argument("--L-v", type=float, default=5.0)
    o.add_argument("--sign", type=int, choices=[-1, 1], default=-1)
    o.add_argument("--out", default="kolmogorov.kmfg")
    return p


def _error(code: int, reason: str, detail: str) -> int:
    print(json.dumps({"status": "error", "reason": reason, "detail": detail}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    apply_thread_limit()

    if args.command == "solve":
        try:
            if args.manifest:
                manifest = parse_manifest(Path(args.manifest).read_text())
            elif args.preset:
                manifest = preset(args.preset)
            else:
                return _error(EXIT_CONFIG, "config", "give a manifest path or --preset")
        except OSError as exc:
            return _error(EXIT_IO, "io", str(exc))
        except ManifestError as exc:
            return _error(EXIT_CONFIG, "manifest", str(exc))
        if args.echo:
            print(echo(manifest))
            return EXIT_OK
        outcome = run(manifest, args.out)
        if outcome.exit_code:
            return _error(outcome.exit_code, outcome.reason, outcome.summary.get("detail", outcome.reason))
        print(json.dumps({"status": "ok", "levels": [lvl["status"] for lvl in outcome.summary["levels"]]}))
        return EXIT_OK

    if args.command == "diagnose":
        try:
            print(json.dumps(diagnose(args.checkpoint, args.suite, args.T), indent=2, default=_json_default))
        except OSError as exc:
            return _error(EXIT_IO, "io", str(exc))
        except GridError as exc:
            return _error(EXIT_CONFIG, "checkpoint", str(exc))
        return EXIT_OK

    if args.command == "compare":
        try:
            print(json.dumps(compare(args.a, args.b), indent=2))
        except OSError as exc:
            return _error(EXIT_IO, "io", str(exc))
        except GridError as exc:
            return _error(EXIT_CONFIG, "grid_mismatch", str(exc))
        return EXIT_OK

    if args.command == "oracle":
        try:
            path = oracle_kolmogorov(args.t, args.n_x, args.n_v, args.L_x, args.L_v, args.sign, args.out)
        except OSError as exc:
            return _error(EXIT_IO, "io", str(exc))
        except (GridError, ValueError) as exc:
            return _error(EXIT_CONFIG, "config", str(exc))
        print(json.dumps({"status": "ok", "path": str(path)}))
        return EXIT_OK
    return EXIT_CONFIG  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
