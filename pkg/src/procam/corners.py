"""Region-of-interest corner detection from a captured blank projection.

Otsu threshold -> morphological boundary -> (rho, theta) Hough accumulator ->
four peaks -> least-squares line refinement -> pairwise intersections.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DetectionFailure, GeometryError
from .imaging import as_image

log = logging.getLogger(__name__)

THETA_STEP_DEG = 1.0
RHO_STEP = 1.0
PEAK_EXCLUDE_RHO = 5
PEAK_EXCLUDE_THETA = 5
MIN_LINE_VOTES = 20
REFINE_BAND = 2.0


@dataclass(frozen=True)
class RegionOfInterest:
    """Camera-space corners ordered top-left, top-right, bottom-right, bottom-left."""

    corners: tuple

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.corners)
        if len(pts) != 4:
            raise GeometryError("a region of interest has exactly four corners")
        if not is_convex(pts):
            raise GeometryError(f"corners do not form a convex quadrilateral: {pts}")
        object.__setattr__(self, "corners", pts)

    def contains(self, x, y) -> np.ndarray:
        """Boolean mask of points strictly inside the quad."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = np.ones(np.broadcast(x, y).shape, dtype=bool)
        for (ax, ay), (bx, by) in zip(self.corners, self.corners[1:] + self.corners[:1]):
            inside &= (bx - ax) * (y - ay) - (by - ay) * (x - ax) > 0
        return inside


def is_convex(pts) -> bool:
    """True when the closed polygon turns the same way at every vertex and no
    three consecutive vertices are collinear."""
    signs = []
    n = len(pts)
    for i in range(n):
        (ax, ay), (bx, by), (cx, cy) = pts[i], pts[(i + 1) % n], pts[(i + 2) % n]
        cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx)
        if abs(cross) < 1e-9:
            return False
        signs.append(cross > 0)
    return all(signs) or not any(signs)


def to_gray(img) -> np.ndarray:
    return as_image(img).astype(np.float64).mean(axis=2)


def otsu_threshold(gray) -> int:
    """Global Otsu threshold on 8-bit intensities.

    Returns t such that foreground is ``gray > t``. Maximises the
    between-class variance over a 256-bin histogram.
    """
    g = np.clip(np.rint(np.asarray(gray, dtype=np.float64)), 0, 255).astype(np.int64)
    hist = np.bincount(g.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = total - w0
    m0 = np.cumsum(hist * levels)
    mt = m0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mt * w0 - m0 * total) ** 2 / (w0 * w1)
    between[~np.isfinite(between)] = -1.0
    best = between.max()
    if best <= 0:
        return int(g.max())  # one populated level: nothing is foreground
    # plateaus: take the middle of the maximising run
    ties = np.flatnonzero(between >= best * (1 - 1e-12))
    return int(ties[len(ties) // 2])


def segment_bright(img) -> np.ndarray:
    gray = to_gray(img)
    return gray > otsu_threshold(gray)


def boundary(mask) -> np.ndarray:
    """Inner boundary: the mask XOR its 3x3 erosion.

    Erosion treats the outside of the frame as foreground so that a region
    touching the image edge does not grow a boundary along it.
    """
    m = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(m, structure=np.ones((3, 3), bool), border_value=1)
    return m ^ eroded


def hough_accumulator(edges):
    """Vote every edge pixel into a (rho, theta) accumulator.

    rho = x cos(theta) + y sin(theta), 1 px bins; theta in [0, 180) deg at 1 deg.
    Returns (acc, rhos, thetas_rad) with acc shaped (len(rhos), len(thetas)).
    """
    e = np.asarray(edges, dtype=bool)
    h, w = e.shape
    diag = int(np.ceil(np.hypot(w, h)))
    rhos = np.arange(-diag, diag + 1, RHO_STEP)
    thetas = np.deg2rad(np.arange(0.0, 180.0, THETA_STEP_DEG))
    ys, xs = np.nonzero(e)
    acc = np.zeros((rhos.size, thetas.size), dtype=np.int64)
    if xs.size == 0:
        return acc, rhos, thetas
    r = xs[:, None] * np.cos(thetas)[None, :] + ys[:, None] * np.sin(thetas)[None, :]
    ri = np.rint((r + diag) / RHO_STEP).astype(np.int64)
    ti = np.broadcast_to(np.arange(thetas.size), ri.shape)
    np.add.at(acc, (ri.ravel(), ti.ravel()), 1)
    return acc, rhos, thetas


def hough_peaks(acc, n=4, rho_exclude=PEAK_EXCLUDE_RHO, theta_exclude=PEAK_EXCLUDE_THETA, min_votes=MIN_LINE_VOTES):
    """Pick up to ``n`` peaks with non-maximum suppression.

    Suppression windows wrap around theta: (rho, 179 deg) neighbours
    (-rho, 0 deg).
    """
    a = acc.copy()
    nr, nt = a.shape
    centre = nr // 2
    peaks = []
    for _ in range(n):
        ri, ti = np.unravel_index(np.argmax(a), a.shape)
        if a[ri, ti] < min_votes:
            break
        peaks.append((int(ri), int(ti), int(a[ri, ti])))
        for dt in range(-theta_exclude, theta_exclude + 1):
            t = ti + dt
            r = ri
            if t < 0 or t >= nt:
                t %= nt
                r = 2 * centre - ri  # wrapped theta flips the sign of rho
            lo, hi = max(0, r - rho_exclude), min(nr, r + rho_exclude + 1)
            a[lo:hi, t] = 0
    return peaks


def refine_line(edges, rho, theta, band=REFINE_BAND):
    """Total-least-squares fit of the edge pixels within ``band`` of a Hough line.

    Returns (nx, ny, c) with unit normal (nx, ny) and nx*x + ny*y = c.
    """
    ys, xs = np.nonzero(edges)
    nx, ny = np.cos(theta), np.sin(theta)
    d = xs * nx + ys * ny - rho
    sel = np.abs(d) <= band
    if sel.sum() < 2:
        return nx, ny, rho
    px, py = xs[sel].astype(float), ys[sel].astype(float)
    mx, my = px.mean(), py.mean()
    cov = np.cov(np.vstack([px - mx, py - my]))
    evals, evecs = np.linalg.eigh(cov)
    n = evecs[:, 0]  # smallest eigenvalue -> normal
    if n @ np.array([nx, ny]) < 0:
        n = -n
    return float(n[0]), float(n[1]), float(n[0] * mx + n[1] * my)


def intersect(l1, l2):
    a1, b1, c1 = l1
    a2, b2, c2 = l2
    det = a1 * b2 - a2 * b1
    if abs(det) < 1e-9:
        return None
    return ((c1 * b2 - c2 * b1) / det, (a1 * c2 - a2 * c1) / det)


def _line_angle(line):
    return np.arctan2(line[1], line[0]) % np.pi


def _angle_gap(a, b):
    d = abs(a - b) % np.pi
    return min(d, np.pi - d)


def order_corners(pts):
    """Order four points TL, TR, BR, BL (image y axis points down).

    Sort by angle about the centroid (clockwise on screen), then rotate so the
    point with the smallest x + y comes first.
    """
    pts = [tuple(map(float, p)) for p in pts]
    cx = sum(p[0] for p in pts) / 4
    cy = sum(p[1] for p in pts) / 4
    pts.sort(key=lambda p: np.arctan2(p[1] - cy, p[0] - cx))
    start = min(range(4), key=lambda i: pts[i][0] + pts[i][1])
    return pts[start:] + pts[:start]


def lines_to_corners(lines):
    """Split four lines into two families of opposite sides and intersect across them."""
    best = None
    for pair in ((0, 1), (0, 2), (0, 3)):
        rest = tuple(i for i in range(4) if i not in pair)
        within = max(
            _angle_gap(_line_angle(lines[pair[0]]), _line_angle(lines[pair[1]])),
            _angle_gap(_line_angle(lines[rest[0]]), _line_angle(lines[rest[1]])),
        )
        if best is None or within < best[0]:
            best = (within, pair, rest)
    _, fam_a, fam_b = best
    pts = []
    for i, j in itertools.product(fam_a, fam_b):
        p = intersect(lines[i], lines[j])
        if p is None:
            raise GeometryError("border lines do not intersect")
        pts.append(p)
    return order_corners(pts)


def detect_region_of_interest(blank_capture, return_debug=False):
    """Locate the projected quad in a captured blank (bright) frame.

    Refined lines are shifted half a pixel outward, since the inner boundary
    sits on the last bright pixel centres rather than on the edge itself.
    """
    img = as_image(blank_capture, "blank capture")
    h, w = img.shape[:2]
    mask = segment_bright(img)
    debug = {"mask": mask}
    if mask.all() or not mask.any():
        raise DetectionFailure("blank capture has no bright/dark separation")
    # keep the largest bright component; specular noise must not vote
    labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
    if n > 1:
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        mask = labels == int(np.argmax(sizes))
    edges = boundary(mask)
    debug["edges"] = edges
    acc, rhos, thetas = hough_accumulator(edges)
    peaks = hough_peaks(acc, n=4)
    debug["peaks"] = peaks
    if len(peaks) < 4:
        raise DetectionFailure(f"found {len(peaks)} dominant border lines, need 4")

    ys, xs = np.nonzero(mask)
    cx, cy = xs.mean(), ys.mean()
    lines = []
    for ri, ti, _ in peaks:
        nx, ny, c = refine_line(edges, rhos[ri], thetas[ti])
        # push outward, away from the quad centroid
        side = nx * cx + ny * cy - c
        c += -0.5 if side > 0 else 0.5
        lines.append((nx, ny, c))
    corners = lines_to_corners(lines)
    for x, y in corners:
        if not (-1.0 <= x <= w and -1.0 <= y <= h):
            raise GeometryError(f"corner ({x:.1f}, {y:.1f}) lies outside the camera frame")
    roi = RegionOfInterest(tuple(corners))
    if return_debug:
        return roi, debug
    return roi
