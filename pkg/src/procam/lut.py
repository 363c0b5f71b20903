"""Quantised per-region colour tables: the fast estimation path.

Each (channel, region) gets 64 bytes, entry ``w`` holding the transfer value
at intensity ``4 w`` clamped and rounded to 8 bits. At run time a buffer
intensity ``z`` reads entry ``z >> 2``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import BundleIOError, InputError, UnsupportedKindError
from .imaging import GridDims, check_buffer, clamp_round_u8
from .photometry import CalibrationModel, transfer_eval, transfer_pointwise

LUT_MAGIC = b"PCLUT1"
LUT_ENTRIES = 64


@dataclass(frozen=True, eq=False)
class ColorLut:
    """``tables`` is uint8 ``(3, grid_height, grid_width, 64)``."""

    grid: GridDims
    tables: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.tables, dtype=np.uint8)
        want = (3, self.grid.grid_height, self.grid.grid_width, LUT_ENTRIES)
        if t.shape != want:
            raise InputError(f"LUT tables must have shape {want}, got {t.shape}")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "tables", t)

    @property
    def nbytes(self) -> int:
        return self.tables.nbytes

    def __eq__(self, other):
        return isinstance(other, ColorLut) and self.grid == other.grid and np.array_equal(self.tables, other.tables)


def build_lut(model: CalibrationModel) -> ColorLut:
    if model.kind != "local":
        raise UnsupportedKindError("colour tables are built from local models only")
    z = 4.0 * np.arange(LUT_ENTRIES)
    values = transfer_eval(model.params, model.flags, z, model.plan.z)  # (gh, gw, 3, 64)
    tables = np.moveaxis(clamp_round_u8(values), 2, 0)
    return ColorLut(model.grid, tables)


def estimate_image_lut(buffer, lut: ColorLut) -> np.ndarray:
    """Estimated image using table lookups at ``w = z // 4``."""
    buf = check_buffer(buffer, lut.grid)
    g = lut.grid
    out = np.empty((g.grid_height, g.grid_width, 3), dtype=np.uint8)
    _kernels.estimate_lut(np.ascontiguousarray(buf), lut.tables, g.col_starts, g.row_starts, out)
    return out


def lut_deviation_bound(buffer, model: CalibrationModel) -> np.ndarray:
    """Per-region, per-channel bound on |estimate_image_lut - estimate_image|.

    The bound is max over the region of |F(4 floor(z/4)) - F(z)| plus one
    rounding unit. Returns float ``(grid_height, grid_width, 3)``.
    """
    buf = check_buffer(buffer, model.grid)
    g = model.grid
    params, flags = model.regional()
    rows = (np.arange(g.buffer_height) * g.grid_height) // g.buffer_height
    cols = (np.arange(g.buffer_width) * g.grid_width) // g.buffer_width
    plan = model.plan.z
    out = np.empty((g.grid_height, g.grid_width, 3))
    for c in range(3):
        # per buffer pixel: its region's transfer function at its own intensity
        p = params[rows[:, None], cols[None, :], c].reshape(-1, 4)
        f = flags[rows[:, None], cols[None, :], c].reshape(-1)
        z = buf[..., c].reshape(-1).astype(np.float64)
        gap = np.abs(transfer_pointwise(p, f, 4.0 * (z // 4), plan) - transfer_pointwise(p, f, z, plan))
        gap = gap.reshape(g.buffer_height, g.buffer_width)
        per_col = np.maximum.reduceat(gap, g.col_starts[:-1], axis=1)
        out[..., c] = np.maximum.reduceat(per_col, g.row_starts[:-1], axis=0)
    return out + 1.0


def lut_bytes(lut: ColorLut) -> bytes:
    head = LUT_MAGIC + struct.pack("<II", lut.grid.grid_width, lut.grid.grid_height)
    return head + lut.tables.tobytes()


def lut_from_bytes(data: bytes, buffer_size) -> ColorLut:
    """Parse a LUT file; the buffer size is not stored and must be supplied."""
    if data[:6] != LUT_MAGIC:
        raise InputError("not a colour LUT (bad magic)")
    gw, gh = struct.unpack("<II", data[6:14])
    body = data[14:]
    if len(body) != 3 * gw * gh * LUT_ENTRIES:
        raise InputError(f"LUT body is {len(body)} bytes, expected {3 * gw * gh * LUT_ENTRIES}")
    grid = GridDims(int(buffer_size[0]), int(buffer_size[1]), gw, gh)
    return ColorLut(grid, np.frombuffer(body, dtype=np.uint8).reshape(3, gh, gw, LUT_ENTRIES))


def save_lut(path, lut: ColorLut) -> None:
    try:
        Path(path).write_bytes(lut_bytes(lut))
    except OSError as e:
        raise BundleIOError(f"cannot write {path}: {e}") from e


def load_lut(path, buffer_size) -> ColorLut:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise BundleIOError(f"cannot read {path}: {e}") from e
    return lut_from_bytes(data, buffer_size)
