"""Hot inner loops, each in a numba flavour and a vectorised numpy flavour.

The public names at the bottom of the module are bound to one flavour at
import time according to :data:`kinmfg._accel.USE_NUMBA`.  Both flavours use
the same arithmetic in the same order so they agree to rounding.

Array conventions
-----------------
``advect_lines`` and ``thomas_batch`` work on 2-D arrays of shape
``(n_lines, n)``: every row is an independent 1-D problem.  Callers move the
axis of interest last and flatten the rest.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

__all__ = [
    "advect_lines",
    "thomas_batch",
    "interp_phase",
    "em_step",
    "KERNELS",
]


# --------------------------------------------------------------------------
# transport along periodic lines
# --------------------------------------------------------------------------
def _advect_lines_py(f, shift, limited):
    n_lines, n = f.shape
    out = np.empty_like(f)
    g = np.empty(n)
    flux = np.empty(n)
    for line in range(n_lines):
        c = shift[line]
        direction = 1
        if c < 0.0:
            direction = -1
            c = -c
        s = int(math.floor(c))
        a = c - s
        for i in range(n):
            g[i] = f[line, (i - direction * s) % n]
        for i in range(n):
            slope = 0.0
            if limited:
                dl = g[i] - g[(i - 1) % n]
                dr = g[(i + 1) % n] - g[i]
                prod = dl * dr
                if prod > 0.0:
                    slope = 2.0 * prod / (dl + dr)
            flux[i] = a * (g[i] + 0.5 * (1.0 - a) * direction * slope)
        for i in range(n):
            out[line, i] = g[i] - flux[i] + flux[(i - direction) % n]
    return out


def _advect_lines_np(f, shift, limited):
    n_lines, n = f.shape
    shift = np.asarray(shift, dtype=np.float64)
    direction = np.where(shift < 0.0, -1, 1)
    c = np.abs(shift)
    s = np.floor(c).astype(np.int64)
    a = (c - s)[:, None]
    idx = (np.arange(n)[None, :] - (direction * s)[:, None]) % n
    g = np.take_along_axis(f, idx, axis=1)
    if limited:
        dl = g - np.roll(g, 1, axis=1)
        dr = np.roll(g, -1, axis=1) - g
        prod = dl * dr
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(prod > 0.0, 2.0 * prod / (dl + dr), 0.0)
    else:
        slope = np.zeros_like(g)
    flux = a * (g + 0.5 * (1.0 - a) * direction[:, None] * slope)
    upstream = np.where(direction[:, None] > 0, np.roll(flux, 1, axis=1), np.roll(flux, -1, axis=1))
    return g - flux + upstream


# --------------------------------------------------------------------------
# batched tridiagonal solve (Thomas); matrices are diagonally dominant
# --------------------------------------------------------------------------
def _thomas_batch_py(lower, diag, upper, rhs):
    n_lines, n = rhs.shape
    x = np.empty_like(rhs)
    cp = np.empty(n)
    dp = np.empty(n)
    for line in range(n_lines):
        beta = diag[line, 0]
        cp[0] = upper[line, 0] / beta
        dp[0] = rhs[line, 0] / beta
        for i in range(1, n):
            beta = diag[line, i] - lower[line, i] * cp[i - 1]
            cp[i] = upper[line, i] / beta
            dp[i] = (rhs[line, i] - lower[line, i] * dp[i - 1]) / beta
        x[line, n - 1] = dp[n - 1]
        for i in range(n - 2, -1, -1):
            x[line, i] = dp[i] - cp[i] * x[line, i + 1]
    return x


def _thomas_batch_np(lower, diag, upper, rhs):
    n = rhs.shape[1]
    cp = np.empty_like(rhs)
    dp = np.empty_like(rhs)
    beta = diag[:, 0]
    cp[:, 0] = upper[:, 0] / beta
    dp[:, 0] = rhs[:, 0] / beta
    for i in range(1, n):
        beta = diag[:, i] - lower[:, i] * cp[:, i - 1]
        cp[:, i] = upper[:, i] / beta
        dp[:, i] = (rhs[:, i] - lower[:, i] * dp[:, i - 1]) / beta
    x = np.empty_like(rhs)
    x[:, n - 1] = dp[:, n - 1]
    for i in range(n - 2, -1, -1):
        x[:, i] = dp[:, i] - cp[:, i] * x[:, i + 1]
    return x


# --------------------------------------------------------------------------
# multilinear interpolation on the phase grid (x periodic, v clamped)
# --------------------------------------------------------------------------
def _interp_phase_py(flat, shape, periodic, coords):
    n_pts, dims = coords.shape
    strides = np.empty(dims, dtype=np.int64)
    stride = 1
    for k in range(dims - 1, -1, -1):
        strides[k] = stride
        stride *= shape[k]
    lo = np.empty(dims, dtype=np.int64)
    hi = np.empty(dims, dtype=np.int64)
    t = np.empty(dims)
    out = np.empty(n_pts)
    for p in range(n_pts):
        for k in range(dims):
            n = shape[k]
            c = coords[p, k]
            if periodic[k]:
                c = c % n
                i0 = int(math.floor(c))
                if i0 >= n:
                    i0 = n - 1
                lo[k] = i0
                hi[k] = (i0 + 1) % n
                t[k] = c - i0
            elif c <= 0.0:
                lo[k] = 0
                hi[k] = 0
                t[k] = 0.0
            elif c >= n - 1:
                lo[k] = n - 1
                hi[k] = n - 1
                t[k] = 0.0
            else:
                i0 = int(math.floor(c))
                lo[k] = i0
                hi[k] = i0 + 1
                t[k] = c - i0
        acc = 0.0
        for corner in range(1 << dims):
            w = 1.0
            idx = 0
            for k in range(dims):
                if (corner >> k) & 1:
                    w *= t[k]
                    idx += hi[k] * strides[k]
                else:
                    w *= 1.0 - t[k]
                    idx += lo[k] * strides[k]
            acc += w * flat[idx]
        out[p] = acc
    return out


def _interp_phase_np(flat, shape, periodic, coords):
    n_pts, dims = coords.shape
    strides = np.empty(dims, dtype=np.int64)
    stride = 1
    for k in range(dims - 1, -1, -1):
        strides[k] = stride
        stride *= shape[k]
    lo = np.empty((n_pts, dims), dtype=np.int64)
    hi = np.empty((n_pts, dims), dtype=np.int64)
    t = np.empty((n_pts, dims))
    for k in range(dims):
        n = shape[k]
        c = coords[:, k]
        if periodic[k]:
            c = c % n
            i0 = np.minimum(np.floor(c).astype(np.int64), n - 1)
            lo[:, k] = i0
            hi[:, k] = (i0 + 1) % n
            t[:, k] = c - i0
        else:
            inside = (c > 0.0) & (c < n - 1)
            i0 = np.clip(np.floor(c), 0, n - 1).astype(np.int64)
            lo[:, k] = i0
            hi[:, k] = np.where(inside, i0 + 1, i0)
            t[:, k] = np.where(inside, c - i0, 0.0)
    acc = np.zeros(n_pts)
    for corner in range(1 << dims):
        w = np.ones(n_pts)
        idx = np.zeros(n_pts, dtype=np.int64)
        for k in range(dims):
            if (corner >> k) & 1:
                w = w * t[:, k]
                idx += hi[:, k] * strides[k]
            else:
                w = w * (1.0 - t[:, k])
                idx += lo[:, k] * strides[k]
        acc += w * flat[idx]
    return acc


# --------------------------------------------------------------------------
# Euler-Maruyama step for dX = -V dt, dV = -b dt + sqrt(2) dB
# --------------------------------------------------------------------------
def _em_step_py(pos, vel, drift, noise, dt, lx, lv):
    n_pts, d = pos.shape
    amp = math.sqrt(2.0 * dt)
    width = 2.0 * lx
    for p in range(n_pts):
        for k in range(d):
            x = pos[p, k] - vel[p, k] * dt
            x = (x + lx) % width - lx
            if x >= lx:
                x -= width
            v = vel[p, k] - drift[p, k] * dt + amp * noise[p, k]
            while v > lv or v < -lv:
                if v > lv:
                    v = 2.0 * lv - v
                else:
                    v = -2.0 * lv - v
            pos[p, k] = x
            vel[p, k] = v


def _em_step_np(pos, vel, drift, noise, dt, lx, lv):
    width = 2.0 * lx
    x = pos - vel * dt
    x = (x + lx) % width - lx
    x = np.where(x >= lx, x - width, x)
    v = vel - drift * dt + math.sqrt(2.0 * dt) * noise
    while True:
        above = v > lv
        below = v < -lv
        if not (above.any() or below.any()):
            break
        v = np.where(above, 2.0 * lv - v, v)
        v = np.where(below, -2.0 * lv - v, v)
    pos[...] = x
    vel[...] = v


KERNELS = {
    "advect_lines": (_advect_lines_py, _advect_lines_np),
    "thomas_batch": (_thomas_batch_py, _thomas_batch_np),
    "interp_phase": (_interp_phase_py, _interp_phase_np),
    "em_step": (_em_step_py, _em_step_np),
}
"""name -> (loop implementation, numpy implementation); loops get jitted below."""

if HAVE_NUMBA:
    KERNELS = {name: (njit(loop), vec) for name, (loop, vec) in KERNELS.items()}


def _pick(name):
    loop, vec = KERNELS[name]
    return loop if USE_NUMBA else vec


_advect = _pick("advect_lines")
_thomas = _pick("thomas_batch")
_interp = _pick("interp_phase")
_em = _pick("em_step")


def advect_lines(f: np.ndarray, shift: np.ndarray, limited: bool) -> np.ndarray:
    """Shift each row of ``f`` periodically by ``shift[row]`` cells.

    ``limited=False`` is the linear-interpolation semi-Lagrangian step (the
    first-order upwind scheme when ``|shift| <= 1``); ``limited=True`` adds a
    van Leer-limited slope in flux form.  Both are conservative and keep
    nonnegative rows nonnegative.
    """
    f = np.ascontiguousarray(f, dtype=np.float64)
    shift = np.ascontiguousarray(shift, dtype=np.float64)
    return _advect(f, shift, bool(limited))


def thomas_batch(lower, diag, upper, rhs) -> np.ndarray:
    arrs = [np.ascontiguousarray(a, dtype=np.float64) for a in (lower, diag, upper, rhs)]
    return _thomas(*arrs)


def interp_phase(values: np.ndarray, periodic, coords: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.float64)
    shape = np.asarray(values.shape, dtype=np.int64)
    flags = np.asarray(periodic, dtype=np.bool_)
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    return _interp(values.ravel(), shape, flags, coords)


def em_step(pos, vel, drift, noise, dt: float, lx: float, lv: float) -> None:
    """Advance particles in place by one Euler-Maruyama step."""
    _em(pos, vel, np.ascontiguousarray(drift), np.ascontiguousarray(noise), float(dt), float(lx), float(lv))
