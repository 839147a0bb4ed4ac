"""Time the numba and numpy flavours of every hot kernel on solver-sized inputs.

    python3 benchmarks/bench_kernels.py [--n 128] [--repeat 5]

Both flavours are imported from ``kinmfg.kernels.KERNELS`` so one process
measures both; the first numba call (compilation or cache load) is excluded.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from kinmfg._accel import HAVE_NUMBA
from kinmfg.kernels import KERNELS


def _inputs(n: int, rng: np.random.Generator) -> dict:
    lines = rng.random((n, n))
    shift = rng.uniform(-3.0, 3.0, n)
    off = -rng.random((n, n))
    diag = 2.5 + rng.random((n, n))
    pts = 200_000
    return {
        "advect_lines": lambda: (lines, shift, True),
        "thomas_batch": lambda: (off, diag, off.copy(), lines),
        "interp_phase": lambda: (
            lines.ravel(),
            np.array([n, n], dtype=np.int64),
            np.array([True, False]),
            rng.uniform(-2, n + 2, (pts, 2)),
        ),
        "em_step": lambda: (
            rng.uniform(-1, 1, (pts, 1)),
            rng.normal(size=(pts, 1)),
            np.zeros((pts, 1)),
            rng.normal(size=(pts, 1)),
            0.01,
            np.pi,
            5.0,
        ),
    }


def _time(fn, make_args, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        args = make_args()
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    inputs = _inputs(args.n, rng)
    print(f"{'kernel':<14}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, (loop, vec) in KERNELS.items():
        make = inputs[name]
        t_np = _time(vec, make, args.repeat)
        if HAVE_NUMBA:
            loop(*make())  # compile / load cache
            t_nb = _time(loop, make, args.repeat)
            print(f"{name:<14}{1e3 * t_nb:>12.3f}{1e3 * t_np:>12.3f}{t_np / t_nb:>10.1f}")
        else:
            print(f"{name:<14}{'n/a':>12}{1e3 * t_np:>12.3f}{'':>10}")


if __name__ == "__main__":
    main()
