"""Planar homography between estimated-image and camera coordinates.

The mapping runs from estimated-image coordinates (X, Y) to camera
coordinates (x', y')::

    x' = (p1 X + p2 Y + p3) / (p7 X + p8 Y + p9)
    y' = (p4 X + p5 Y + p6) / (p7 X + p8 Y + p9)

and is tabulated once per calibration into a ``CorrespondenceTable``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BundleIOError,
    CoverageError,
    HorizonPointError,
    InputError,
    SingularSystemError,
)
from .imaging import round_half_away

TABLE_MAGIC = b"PCHOM1"
_EPS_COLLINEAR = 1e-9
_EPS_DENOM = 1e-12


@dataclass(frozen=True)
class HomographyParams:
    """Coefficients p1..p9, normalised so that p9 == 1."""

    p: tuple

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        if len(p) != 9:
            raise InputError(f"homography needs 9 coefficients, got {len(p)}")
        if not all(np.isfinite(p)):
            raise InputError("homography coefficients must be finite")
        object.__setattr__(self, "p", p)
        if abs(np.linalg.det(self.matrix)) < 1e-12:
            raise SingularSystemError("homography matrix is singular")

    @classmethod
    def from_matrix(cls, m) -> "HomographyParams":
        m = np.asarray(m, dtype=np.float64).reshape(3, 3)
        if abs(m[2, 2]) < 1e-15:
            raise SingularSystemError("cannot normalise homography with p9 == 0")
        return cls(tuple((m / m[2, 2]).ravel()))

    @classmethod
    def identity(cls) -> "HomographyParams":
        return cls((1, 0, 0, 0, 1, 0, 0, 0, 1))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.p, dtype=np.float64).reshape(3, 3)

    def inverse(self) -> "HomographyParams":
        return HomographyParams.from_matrix(np.linalg.inv(self.matrix))

    def compose(self, other: "HomographyParams") -> "HomographyParams":
        """Homography applying ``other`` first, then ``self``."""
        return HomographyParams.from_matrix(self.matrix @ other.matrix)


def _collinear(a, b, c) -> bool:
    (ax, ay), (bx, by), (cx, cy) = a, b, c
    cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    scale = max(abs(bx - ax), abs(by - ay), abs(cx - ax), abs(cy - ay), 1.0)
    return abs(cross) <= _EPS_COLLINEAR * scale * scale


def _check_general_position(points, label):
    for i in range(4):
        tri = [points[j] for j in range(4) if j != i]
        if _collinear(*tri):
            raise SingularSystemError(f"three {label} points are collinear: {tri}")


def estimate_homography(pairs: Sequence) -> HomographyParams:
    """Solve for the homography from four ``(source, destination)`` pairs.

    Sources are estimated-image points, destinations camera points. With p9
    fixed to 1 the four pairs give an 8x8 linear system.
    """
    if len(pairs) != 4:
        raise InputError(f"exactly 4 point pairs required, got {len(pairs)}")
    src = [(float(s[0]), float(s[1])) for s, _ in pairs]
    dst = [(float(d[0]), float(d[1])) for _, d in pairs]
    if not np.all(np.isfinite(src + dst)):
        raise InputError("non-finite correspondence")
    _check_general_position(src, "source")
    _check_general_position(dst, "destination")

    A = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i, ((X, Y), (x, y)) in enumerate(zip(src, dst)):
        A[2 * i] = [X, Y, 1, 0, 0, 0, -x * X, -x * Y]
        A[2 * i + 1] = [0, 0, 0, X, Y, 1, -y * X, -y * Y]
        rhs[2 * i] = x
        rhs[2 * i + 1] = y
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularSystemError("degenerate point configuration") from e
    return HomographyParams(tuple(sol) + (1.0,))


def map_points(h: HomographyParams, X, Y):
    """Vectorised ``map_point`` over coordinate arrays."""
    p1, p2, p3, p4, p5, p6, p7, p8, p9 = h.p
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    den = p7 * X + p8 * Y + p9
    if np.any(np.abs(den) < _EPS_DENOM):
        raise HorizonPointError("point maps to infinity (vanishing denominator)")
    return (p1 * X + p2 * Y + p3) / den, (p4 * X + p5 * Y + p6) / den


def map_point(h: HomographyParams, q) -> tuple[float, float]:
    x, y = map_points(h, q[0], q[1])
    return float(x), float(y)


@dataclass(frozen=True, eq=False)
class CorrespondenceTable:
    """Per estimated-image pixel, the integer camera pixel it compares with.

    ``entries`` has shape ``(grid_height, grid_width, 2)`` holding ``(x', y')``.
    """

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.ndim != 3 or e.shape[2] != 2:
            raise InputError(f"table entries must be (H, W, 2), got {e.shape}")
        e = e.astype(np.int64, copy=True)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def grid_width(self) -> int:
        return self.entries.shape[1]

    @property
    def grid_height(self) -> int:
        return self.entries.shape[0]

    @property
    def xs(self) -> np.ndarray:
        return self.entries[..., 0]

    @property
    def ys(self) -> np.ndarray:
        return self.entries[..., 1]

    def check_camera(self, cam_width: int, cam_height: int) -> None:
        if self.xs.min() < 0 or self.ys.min() < 0 or self.xs.max() >= cam_width or self.ys.max() >= cam_height:
            raise InputError(
                f"correspondence table references pixels outside a {cam_width}x{cam_height} camera image"
            )

    def __eq__(self, other):
        return isinstance(other, CorrespondenceTable) and np.array_equal(self.entries, other.entries)


def build_correspondence_table(h: HomographyParams, grid, cam) -> CorrespondenceTable:
    """Tabulate the rounded camera pixel for every estimated-image pixel.

    ``grid`` and ``cam`` are ``(width, height)`` pairs.
    """
    gw, gh = int(grid[0]), int(grid[1])
    cw, ch = int(cam[0]), int(cam[1])
    Y, X = np.mgrid[0:gh, 0:gw]
    mx, my = map_points(h, X, Y)
    ex = round_half_away(mx)
    ey = round_half_away(my)
    bad = (ex < 0) | (ey < 0) | (ex >= cw) | (ey >= ch)
    if bad.any():
        y0, x0 = np.argwhere(bad)[0]
        raise CoverageError(
            f"estimated pixel ({x0}, {y0}) maps to camera ({mx[y0, x0]:.2f}, {my[y0, x0]:.2f}), "
            f"outside the {cw}x{ch} camera frame",
            pixel=(int(x0), int(y0)),
        )
    return CorrespondenceTable(np.stack([ex, ey], axis=-1).astype(np.int64))


def grid_corners(grid) -> list[tuple[float, float]]:
    """Outer corners of the estimated image, TL, TR, BR, BL, in pixel-centre coordinates."""
    gw, gh = grid
    return [(-0.5, -0.5), (gw - 0.5, -0.5), (gw - 0.5, gh - 0.5), (-0.5, gh - 0.5)]


# persistence


def save_homography(path, h: HomographyParams) -> None:
    try:
        Path(path).write_bytes(struct.pack("<9d", *h.p))
    except OSError as e:
        raise BundleIOError(f"cannot write {path}: {e}") from e


def load_homography(path) -> HomographyParams:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise BundleIOError(f"cannot read {path}: {e}") from e
    if len(data) != 72:
        raise InputError(f"{path}: homography file must be 72 bytes, got {len(data)}")
    return HomographyParams(struct.unpack("<9d", data))


def table_bytes(table: CorrespondenceTable) -> bytes:
    if table.entries.max() > 0xFFFF:
        raise InputError("camera coordinates exceed 16-bit table range")
    head = TABLE_MAGIC + struct.pack("<II", table.grid_width, table.grid_height)
    return head + table.entries.astype("<u2").tobytes()


def table_from_bytes(data: bytes) -> CorrespondenceTable:
    if data[:6] != TABLE_MAGIC:
        raise InputError("not a correspondence table (bad magic)")
    gw, gh = struct.unpack("<II", data[6:14])
    body = data[14:]
    if len(body) != gw * gh * 4:
        raise InputError(f"table body is {len(body)} bytes, expected {gw * gh * 4}")
    return CorrespondenceTable(np.frombuffer(body, dtype="<u2").reshape(gh, gw, 2))


def save_table(path, table: CorrespondenceTable) -> None:
    try:
        Path(path).write_bytes(table_bytes(table))
    except OSError as e:
        raise BundleIOError(f"cannot write {path}: {e}") from e


def load_table(path) -> CorrespondenceTable:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise BundleIOError(f"cannot read {path}: {e}") from e
    return table_from_bytes(data)
