"""Independent reference implementations used only by the tests.

Each one is written the slow, obvious way (plain Python loops, exact
definitions) so that it shares no code path with the package.
"""
import math
from collections import deque

import numpy as np


def gauss_solve(A, b):
    """Gaussian elimination with partial pivoting on Python floats."""
    n = len(b)
    M = [list(map(float, row)) + [float(v)] for row, v in zip(A, b)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(M[r][col]))
        if abs(M[piv][col]) < 1e-15:
            raise ZeroDivisionError("singular")
        M[col], M[piv] = M[piv], M[col]
        for r in range(col + 1, n):
            f = M[r][col] / M[col][col]
            for c in range(col, n + 1):
                M[r][c] -= f * M[col][c]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (M[r][n] - sum(M[r][c] * x[c] for c in range(r + 1, n))) / M[r][r]
    return x


def homography_oracle(src, dst):
    """3x3 matrix (p9 = 1) mapping ``src`` points onto ``dst``."""
    A, b = [], []
    for (X, Y), (x, y) in zip(src, dst):
        A.append([X, Y, 1, 0, 0, 0, -x * X, -x * Y])
        b.append(x)
        A.append([0, 0, 0, X, Y, 1, -y * X, -y * Y])
        b.append(y)
    p = gauss_solve(A, b) + [1.0]
    return [p[0:3], p[3:6], p[6:9]]


def apply_matrix(m, x, y):
    v = [m[r][0] * x + m[r][1] * y + m[r][2] for r in range(3)]
    return v[0] / v[2], v[1] / v[2]


def round_half_away(v):
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def q8(v):
    return round_half_away(min(255.0, max(0.0, v)))


def logistic(p, z):
    a, alpha, b, k = p
    return a / (1.0 + math.exp(-alpha * (z - b))) + k


def piecewise(samples, plan, z):
    """Linear interpolation through (plan, samples), flat outside."""
    if z <= plan[0]:
        return samples[0]
    if z >= plan[-1]:
        return samples[-1]
    for i in range(3):
        if z <= plan[i + 1]:
            t = (z - plan[i]) / (plan[i + 1] - plan[i])
            return samples[i] + t * (samples[i + 1] - samples[i])
    raise AssertionError


def transfer(params, flag, plan, z):
    return piecewise(params, plan, z) if flag & 1 else logistic(params, z)


def estimate_oracle(buffer, params, flags, plan, grid_w, grid_h, quantize_pixels=True):
    """Brute-force estimated image.

    Every buffer pixel is assigned to its region with the floor formula,
    transferred in double precision, and (by default) clamped and rounded
    to 8 bits before the region mean is taken and rounded.
    """
    bh, bw = buffer.shape[:2]
    sums = np.zeros((grid_h, grid_w, 3))
    counts = np.zeros((grid_h, grid_w))
    for y in range(bh):
        ry = y * grid_h // bh
        for x in range(bw):
            rx = x * grid_w // bw
            counts[ry, rx] += 1
            for c in range(3):
                v = transfer(params[ry][rx][c], flags[ry][rx][c], plan, float(buffer[y, x, c]))
                sums[ry, rx, c] += q8(v) if quantize_pixels else v
    out = np.zeros((grid_h, grid_w, 3), dtype=np.int64)
    for ry in range(grid_h):
        for rx in range(grid_w):
            for c in range(3):
                out[ry, rx, c] = q8(sums[ry, rx, c] / counts[ry, rx])
    return out


def components_bfs(mask):
    """8-connected components by breadth-first search; list of pixel sets."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or seen[y, x]:
                continue
            comp = set()
            q = deque([(x, y)])
            seen[y, x] = True
            while q:
                cx, cy = q.popleft()
                comp.add((cx, cy))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        nx, ny = cx + dx, cy + dy
                        if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((nx, ny))
            comps.append(comp)
    return comps


def window_sum(mask, x, y, r=2):
    h, w = mask.shape
    return sum(
        int(mask[j, i])
        for j in range(max(0, y - r), min(h, y + r + 1))
        for i in range(max(0, x - r), min(w, x + r + 1))
    )


def render_quad(width, height, corners, inside=230, outside=8, ss=8):
    """Rasterise a convex quad by supersampled point-in-polygon tests.

    Pixel (i, j) covers [i-0.5, i+0.5] x [j-0.5, j+0.5]; coverage is the
    fraction of ``ss`` x ``ss`` subsamples inside the quad.
    """
    off = (np.arange(ss) + 0.5) / ss - 0.5
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    cover = np.zeros((height, width))
    pts = list(corners)
    for oy in off:
        for ox in off:
            px, py = xs + ox, ys + oy
            inside_all = np.ones_like(px, dtype=bool)
            for i in range(4):
                (x0, y0), (x1, y1) = pts[i], pts[(i + 1) % 4]
                inside_all &= (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0) >= 0
            cover += inside_all
    cover /= ss * ss
    val = outside + (inside - outside) * cover
    return np.repeat(val[..., None], 3, axis=2)
