"""Frame differencing, denoising and spot extraction."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import InputError
from .geometry import CorrespondenceTable
from .imaging import as_binary, as_image, image_size
from .lut import ColorLut, estimate_image_lut
from .photometry import CalibrationModel, estimate_image

NEIGHBOURHOOD = 5
NEIGHBOURHOOD_MIN_SUM = 10  # strictly greater than this is required
DENSITY_RATIO = 0.2
REFERENCE_GRID = (320, 240)
_EIGHT = np.ones((3, 3), dtype=bool)


class ThresholdTriple(NamedTuple):
    red: int
    green: int
    blue: int

    @classmethod
    def of(cls, value) -> "ThresholdTriple":
        """Build from a triple, a scalar, or an ``"R,G,B"`` string."""
        if isinstance(value, ThresholdTriple):
            return value
        if isinstance(value, str):
            parts = [p.strip() for p in value.split(",")]
            if len(parts) == 1:
                parts *= 3
            try:
                value = [int(p) for p in parts]
            except ValueError as e:
                raise InputError(f"thresholds must be integers: {value!r}") from e
        elif np.isscalar(value):
            value = [value] * 3
        vals = [int(v) for v in value]
        if len(vals) != 3:
            raise InputError(f"a threshold triple has three components, got {len(vals)}")
        if any(v < 0 or v > 255 for v in vals):
            raise InputError(f"thresholds must lie in [0, 255]: {vals}")
        return cls(*vals)

    def __str__(self):
        return f"{self.red},{self.green},{self.blue}"


@dataclass(frozen=True)
class SpotFilterConfig:
    a1: int = 12
    a2: int = 120
    density: float = DENSITY_RATIO

    def __post_init__(self):
        if not (0 < self.a1 < self.a2):
            raise InputError(f"spot area thresholds need 0 < A1 < A2, got A1={self.a1}, A2={self.a2}")

    @classmethod
    def for_grid(cls, grid_width: int, grid_height: int, a1=12, a2=120) -> "SpotFilterConfig":
        """Defaults scaled by grid area relative to 320x240."""
        s = (grid_width * grid_height) / (REFERENCE_GRID[0] * REFERENCE_GRID[1])
        lo = max(1, int(round(a1 * s)))
        hi = max(lo + 1, int(round(a2 * s)))
        return cls(lo, hi)


@dataclass(frozen=True, eq=False)
class Spot:
    """An 8-connected group of set pixels in estimated-image coordinates.

    ``pixels`` is ``(area, 2)`` of ``(x, y)``; ``bbox`` is inclusive
    ``(x0, y0, x1, y1)``.
    """

    pixels: np.ndarray
    area: int
    bbox: tuple
    centroid: tuple

    @property
    def width(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def height(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1


@dataclass
class DetectionReport:
    frame_index: int
    spots: list
    raw_count: int
    filtered_count: int
    accepted_count: int
    timings_us: dict = field(default_factory=dict)

    @property
    def latency_us(self) -> int:
        return int(sum(self.timings_us.values()))

    @property
    def centroids(self) -> list:
        return [s.centroid for s in self.spots]

    def to_dict(self, timings=True) -> dict:
        d = {
            "frame": self.frame_index,
            "centroids": [[round(s.centroid[0], 4), round(s.centroid[1], 4), s.area] for s in self.spots],
            "counts": {"raw": self.raw_count, "filtered": self.filtered_count, "accepted": self.accepted_count},
        }
        if timings:
            d["timings_us"] = dict(self.timings_us)
        return d

    def to_json(self, timings=True) -> str:
        return json.dumps(self.to_dict(timings), separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "DetectionReport":
        d = json.loads(line)
        spots = [
            Spot(np.empty((0, 2), np.int64), int(a), (int(x), int(y), int(x), int(y)), (float(x), float(y)))
            for x, y, a in d["centroids"]
        ]
        c = d.get("counts", {})
        n = len(spots)
        return cls(d["frame"], spots, c.get("raw", n), c.get("filtered", n), c.get("accepted", n), d.get("timings_us", {}))


def segment(estimated, camera, table: CorrespondenceTable, u) -> np.ndarray:
    """Binary change mask: 1 where any channel differs by more than its threshold.

    Only camera pixels referenced by ``table`` are read; the periphery is never
    consulted.
    """
    est = as_image(estimated, "estimated image")
    cam = as_image(camera, "camera image")
    if image_size(est) != (table.grid_width, table.grid_height):
        raise InputError(
            f"estimated image {image_size(est)} does not match table grid {(table.grid_width, table.grid_height)}"
        )
    cw, ch = image_size(cam)
    table.check_camera(cw, ch)
    u = np.asarray(ThresholdTriple.of(u), dtype=np.int64)
    out = np.empty(est.shape[:2], dtype=np.uint8)
    _kernels.segment_kernel(np.ascontiguousarray(est), np.ascontiguousarray(cam), table.xs, table.ys, u, out)
    return out


def window_sums(o, size=NEIGHBOURHOOD) -> np.ndarray:
    """Sum over a ``size`` x ``size`` window centred on each pixel, cropped at borders."""
    o = as_binary(o).astype(np.int32)
    r = size // 2
    padded = np.pad(o, r)
    ii = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int32)
    ii[1:, 1:] = padded.cumsum(0).cumsum(1)
    h, w = o.shape
    return ii[size : size + h, size : size + w] - ii[0:h, size : size + w] - ii[size : size + h, 0:w] + ii[0:h, 0:w]


def neighborhood_filter(o) -> np.ndarray:
    """Keep a set pixel only if its 5x5 window (centre included) sums to more than 10."""
    o = as_binary(o)
    return ((o == 1) & (window_sums(o) > NEIGHBOURHOOD_MIN_SUM)).astype(np.uint8)


def connected_components(o) -> list[Spot]:
    """8-connected components, in raster order of their first pixel."""
    o = as_binary(o)
    labels, n = ndimage.label(o, structure=_EIGHT)
    if n == 0:
        return []
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    order = np.argsort(lab, kind="stable")
    ys, xs, lab = ys[order], xs[order], lab[order]
    bounds = np.searchsorted(lab, np.arange(1, n + 2))
    spots = []
    for i in range(n):
        sx = xs[bounds[i] : bounds[i + 1]]
        sy = ys[bounds[i] : bounds[i + 1]]
        area = int(sx.size)
        spots.append(
            Spot(
                pixels=np.stack([sx, sy], axis=1),
                area=area,
                bbox=(int(sx.min()), int(sy.min()), int(sx.max()), int(sy.max())),
                centroid=(float(sx.sum()) / area, float(sy.sum()) / area),
            )
        )
    return spots


def passes_area_rules(spot: Spot, cfg: SpotFilterConfig) -> bool:
    if spot.area < cfg.a1:
        return False
    if spot.area > cfg.a2:
        return True
    side = max(spot.width, spot.height)
    return spot.area > cfg.density * side * side


def filter_spots(spots, cfg: SpotFilterConfig) -> list[Spot]:
    """Apply the area and density acceptance rules; input order is preserved."""
    return [s for s in spots if passes_area_rules(s, cfg)]


def detect_frame(
    buffer,
    camera,
    estimator,
    table: CorrespondenceTable,
    u,
    cfg: SpotFilterConfig,
    frame_index: int = 0,
) -> DetectionReport:
    """Run one frame through estimation, segmentation and spot extraction.

    ``estimator`` is a ``ColorLut`` (fast path) or a ``CalibrationModel``
    (direct evaluation, required for global models).
    """
    clock = time.perf_counter_ns
    t0 = clock()
    if isinstance(estimator, ColorLut):
        est = estimate_image_lut(buffer, estimator)
    elif isinstance(estimator, CalibrationModel):
        est = estimate_image(buffer, estimator)
    else:
        raise InputError(f"estimator must be a ColorLut or CalibrationModel, not {type(estimator).__name__}")
    t1 = clock()
    seg = segment(est, camera, table, u)
    t2 = clock()
    den = neighborhood_filter(seg)
    t3 = clock()
    raw = connected_components(den)
    t4 = clock()
    kept = [s for s in raw if s.area >= cfg.a1]
    accepted = filter_spots(kept, cfg)
    t5 = clock()
    timings = {
        "estimate": (t1 - t0) // 1000,
        "segment": (t2 - t1) // 1000,
        "filter": (t3 - t2) // 1000,
        "components": (t4 - t3) // 1000,
        "spots": (t5 - t4) // 1000,
    }
    return DetectionReport(frame_index, accepted, len(raw), len(kept), len(accepted), timings)
