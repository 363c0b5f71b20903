"""Compiled per-pixel kernels (numba).

Every kernel uses output decomposition: one task per estimated-image row,
each writing only its own output pixels, so ``prange`` needs no locking.
"""
import math
import os

import numba
import numpy as np
from numba import njit, prange

FLAG_FALLBACK = 1

# the installed TBB may be too old; pick a layer that never needs it
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"


@njit(cache=True, inline="always")
def _transfer(a, alpha, b, k, flag, z, plan):
    if flag & FLAG_FALLBACK:
        # piecewise-linear through the four calibration samples; (a, alpha, b, k)
        # hold the observed values at plan[0..3], flat beyond the ends
        if z <= plan[0]:
            return a
        if z >= plan[3]:
            return k
        if z <= plan[1]:
            return a + (alpha - a) * (z - plan[0]) / (plan[1] - plan[0])
        if z <= plan[2]:
            return alpha + (b - alpha) * (z - plan[1]) / (plan[2] - plan[1])
        return b + (k - b) * (z - plan[2]) / (plan[3] - plan[2])
    return a / (1.0 + math.exp(-alpha * (z - b))) + k


@njit(cache=True, inline="always")
def _q8(v):
    # clamp to [0, 255] then round half away from zero (v >= 0 after clamping)
    if not v > 0.0:
        return 0
    if v > 255.0:
        return 255
    return int(math.floor(v + 0.5))


@njit(cache=True, inline="always")
def _mean_round(total, n):
    # round(total / n) half away from zero for non-negative integers
    return (2 * total + n) // (2 * n)


@njit(cache=True, parallel=True)
def estimate_direct(buffer, params, flags, plan, col_starts, row_starts, out):
    gh, gw = out.shape[0], out.shape[1]
    for gy in prange(gh):
        y0, y1 = row_starts[gy], row_starts[gy + 1]
        for gx in range(gw):
            x0, x1 = col_starts[gx], col_starts[gx + 1]
            n = (y1 - y0) * (x1 - x0)
            for c in range(3):
                a = params[gy, gx, c, 0]
                al = params[gy, gx, c, 1]
                b = params[gy, gx, c, 2]
                k = params[gy, gx, c, 3]
                f = flags[gy, gx, c]
                total = 0
                for y in range(y0, y1):
                    for x in range(x0, x1):
                        total += _q8(_transfer(a, al, b, k, f, float(buffer[y, x, c]), plan))
                out[gy, gx, c] = _mean_round(total, n)


@njit(cache=True, parallel=True)
def estimate_lut(buffer, tables, col_starts, row_starts, out):
    gh, gw = out.shape[0], out.shape[1]
    for gy in prange(gh):
        y0, y1 = row_starts[gy], row_starts[gy + 1]
        for gx in range(gw):
            x0, x1 = col_starts[gx], col_starts[gx + 1]
            n = (y1 - y0) * (x1 - x0)
            t0 = 0
            t1 = 0
            t2 = 0
            for y in range(y0, y1):
                for x in range(x0, x1):
                    t0 += tables[0, gy, gx, buffer[y, x, 0] >> 2]
                    t1 += tables[1, gy, gx, buffer[y, x, 1] >> 2]
                    t2 += tables[2, gy, gx, buffer[y, x, 2] >> 2]
            out[gy, gx, 0] = _mean_round(t0, n)
            out[gy, gx, 1] = _mean_round(t1, n)
            out[gy, gx, 2] = _mean_round(t2, n)


@njit(cache=True, parallel=True)
def segment_kernel(estimated, camera, tx, ty, u, out):
    gh, gw = out.shape[0], out.shape[1]
    for y in prange(gh):
        for x in range(gw):
            cx = tx[y, x]
            cy = ty[y, x]
            hit = 0
            for c in range(3):
                # widen before subtracting: uint8 arithmetic would wrap
                d = np.int64(estimated[y, x, c]) - np.int64(camera[cy, cx, c])
                if d < 0:
                    d = -d
                if d > u[c]:
                    hit = 1
            out[y, x] = hit


def set_threads(n: int) -> int:
    """Set the kernel thread count, capped at what numba was started with."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def max_threads() -> int:
    return int(numba.config.NUMBA_NUM_THREADS)


def warmup():
    """Compile all kernels on tiny inputs."""
    buf = np.zeros((2, 2, 3), np.uint8)
    cs = np.array([0, 2], np.int64)
    out = np.zeros((1, 1, 3), np.uint8)
    estimate_direct(buf, np.zeros((1, 1, 3, 4)), np.zeros((1, 1, 3), np.uint8), np.array([32.0, 96, 160, 224]), cs, cs, out)
    estimate_lut(buf, np.zeros((3, 1, 1, 64), np.uint8), cs, cs, out)
    segment_kernel(out, buf, np.zeros((1, 1), np.int64), np.zeros((1, 1), np.int64), np.zeros(3, np.int64), np.zeros((1, 1), np.uint8))
