"""Raster conventions and the buffer-to-region partition.

Images are plain numpy arrays:

* ``Image``: ``uint8`` array of shape ``(height, width, 3)``, channels in
  (red, green, blue) order, row-major and channel-interleaved.
* ``BinaryImage``: ``uint8`` array of shape ``(height, width)`` holding 0/1.

Frame buffers, camera images and estimated images all use the ``Image``
layout; only their dimensions differ.

Pixel (i, j) is taken to cover the continuous square ``[i-0.5, i+0.5] x
[j-0.5, j+0.5]``, so pixel centres sit on integer coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import BoundsError, InputError

RED, GREEN, BLUE = 0, 1, 2
CHANNELS = ("red", "green", "blue")


def as_image(arr, name="image") -> np.ndarray:
    """Validate ``arr`` as an 8-bit RGB image and return it as uint8."""
    a = np.asarray(arr)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InputError(f"{name}: expected shape (H, W, 3), got {a.shape}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise InputError(f"{name}: empty image")
    if a.dtype != np.uint8:
        if np.issubdtype(a.dtype, np.floating) and not np.all(np.isfinite(a)):
            raise InputError(f"{name}: non-finite intensities")
        if a.min() < 0 or a.max() > 255:
            raise InputError(f"{name}: intensities outside [0, 255]")
        a = a.astype(np.uint8)
    return a


def as_binary(arr, name="binary image") -> np.ndarray:
    a = np.asarray(arr)
    if a.ndim != 2:
        raise InputError(f"{name}: expected shape (H, W), got {a.shape}")
    if a.dtype == bool:
        return a.astype(np.uint8)
    if a.size and (a.min() < 0 or a.max() > 1):
        raise InputError(f"{name}: values must be 0 or 1")
    return a.astype(np.uint8, copy=False)


def blank_image(width: int, height: int, value=0) -> np.ndarray:
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[...] = value
    return img


def image_size(img: np.ndarray) -> tuple[int, int]:
    """(width, height) of an image or binary image."""
    return int(img.shape[1]), int(img.shape[0])


@dataclass(frozen=True)
class GridDims:
    """Frame-buffer size and estimated-image (grid) size."""

    buffer_width: int
    buffer_height: int
    grid_width: int
    grid_height: int

    def __post_init__(self):
        dims = (self.buffer_width, self.buffer_height, self.grid_width, self.grid_height)
        if any(int(d) != d or d <= 0 for d in dims):
            raise InputError(f"grid dimensions must be positive integers: {dims}")
        if self.grid_width > self.buffer_width or self.grid_height > self.buffer_height:
            raise InputError(
                f"grid {self.grid_width}x{self.grid_height} larger than buffer "
                f"{self.buffer_width}x{self.buffer_height}"
            )

    @property
    def buffer_size(self) -> tuple[int, int]:
        return self.buffer_width, self.buffer_height

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.grid_width, self.grid_height

    @property
    def n_regions(self) -> int:
        return self.grid_width * self.grid_height

    @cached_property
    def col_starts(self) -> np.ndarray:
        """First buffer column of each region column, plus a final sentinel.

        Buffer column p falls in region column x iff x*Bw/Ew <= p < (x+1)*Bw/Ew,
        so the start of region column x is ceil(x*Bw/Ew).
        """
        x = np.arange(self.grid_width + 1, dtype=np.int64)
        return (x * self.buffer_width + self.grid_width - 1) // self.grid_width

    @cached_property
    def row_starts(self) -> np.ndarray:
        y = np.arange(self.grid_height + 1, dtype=np.int64)
        return (y * self.buffer_height + self.grid_height - 1) // self.grid_height

    @cached_property
    def region_sizes(self) -> np.ndarray:
        """(grid_height, grid_width) array of pixel counts per region."""
        w = np.diff(self.col_starts)
        h = np.diff(self.row_starts)
        return np.outer(h, w)

    def buffer_to_grid(self, bx, by):
        """Continuous buffer coordinates to continuous grid coordinates."""
        sx = self.buffer_width / self.grid_width
        sy = self.buffer_height / self.grid_height
        return (np.asarray(bx) + 0.5) / sx - 0.5, (np.asarray(by) + 0.5) / sy - 0.5

    def grid_to_buffer(self, gx, gy):
        sx = self.buffer_width / self.grid_width
        sy = self.buffer_height / self.grid_height
        return (np.asarray(gx) + 0.5) * sx - 0.5, (np.asarray(gy) + 0.5) * sy - 0.5


def region_of(p, dims: GridDims) -> tuple[int, int]:
    """Index of the region that buffer pixel ``p = (x, y)`` belongs to."""
    x, y = int(p[0]), int(p[1])
    if not (0 <= x < dims.buffer_width and 0 <= y < dims.buffer_height):
        raise BoundsError(f"pixel {p} outside {dims.buffer_width}x{dims.buffer_height} buffer")
    return (x * dims.grid_width) // dims.buffer_width, (y * dims.grid_height) // dims.buffer_height


def region_pixels(r, dims: GridDims) -> set[tuple[int, int]]:
    """All buffer pixels collapsing onto estimated-image pixel ``r``."""
    rx, ry = int(r[0]), int(r[1])
    if not (0 <= rx < dims.grid_width and 0 <= ry < dims.grid_height):
        raise BoundsError(f"region {r} outside {dims.grid_width}x{dims.grid_height} grid")
    xs = range(dims.col_starts[rx], dims.col_starts[rx + 1])
    ys = range(dims.row_starts[ry], dims.row_starts[ry + 1])
    return {(int(x), int(y)) for y in ys for x in xs}


def check_buffer(buffer, dims: GridDims, name="frame buffer") -> np.ndarray:
    buf = as_image(buffer, name)
    if image_size(buf) != dims.buffer_size:
        raise InputError(
            f"{name} is {image_size(buf)[0]}x{image_size(buf)[1]}, "
            f"calibration expects {dims.buffer_width}x{dims.buffer_height}"
        )
    return buf


def round_half_away(x):
    """Round half away from zero (numpy's ``round`` is half-to-even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def clamp_round_u8(x) -> np.ndarray:
    """Clamp to [0, 255] then round half away from zero, as uint8."""
    return round_half_away(np.clip(x, 0.0, 255.0)).astype(np.uint8)
