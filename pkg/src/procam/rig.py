"""Deterministic virtual projector-camera rig.

Light path for one camera pixel (continuous coordinates, pixel centres on
integers):

1. supersample the pixel footprint, map each sample to the screen (= frame
   buffer coordinates) through the camera->buffer homography, average the
   buffer pixels hit;
2. apply the ground-truth response (gamma-gain-offset by default);
3. multiply by the vignette and stationary gain maps, add stationary offsets;
4. apply any scripted non-stationary event covering the pixel centre;
5. blend with the dark periphery by the fraction of samples on the screen;
6. add seeded Gaussian noise, clamp, round to 8 bits.

Camera pixels that see no part of the screen read exactly ``periphery``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import InputError
from .geometry import HomographyParams, estimate_homography, grid_corners, map_points
from .imaging import GridDims, as_image, clamp_round_u8

DEFAULT_ROI = ((20.3, 16.8), (300.6, 12.4), (306.1, 228.7), (14.2, 223.5))
CALIBRATION_FRAME_BASE = 1 << 40  # noise streams for calibration captures


@dataclass(frozen=True)
class StationaryPatch:
    """A fixed gain/offset region on the screen (stain, reflective object, lamp)."""

    shape: str
    center: tuple
    size: tuple
    gain: tuple = (1.0, 1.0, 1.0)
    offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.shape not in ("rect", "ellipse"):
            raise InputError(f"unknown patch shape {self.shape!r}")

    def contains(self, bx, by):
        return _inside(self.shape, self.center, self.size, bx, by)


def _inside(shape, center, size, x, y):
    dx = (np.asarray(x) - center[0]) / (size[0] / 2.0)
    dy = (np.asarray(y) - center[1]) / (size[1] / 2.0)
    if shape == "rect":
        return (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)
    return dx * dx + dy * dy <= 1.0


@dataclass(frozen=True)
class Event:
    """A non-stationary perturbation moving along keyframes ``(frame, x, y)``.

    Positions are screen (buffer) coordinates, linearly interpolated between
    keyframes. ``delta`` adds per-channel camera intensity; ``override``
    replaces it.
    """

    shape: str
    size: tuple
    keyframes: tuple
    delta: tuple | None = None
    override: tuple | None = None
    label: str = ""

    def __post_init__(self):
        if self.shape not in ("rect", "ellipse"):
            raise InputError(f"unknown event shape {self.shape!r}")
        if (self.delta is None) == (self.override is None):
            raise InputError("an event sets exactly one of delta or override")
        kf = tuple((int(f), float(x), float(y)) for f, x, y in self.keyframes)
        if not kf or any(f < 0 for f, _, _ in kf) or any(b[0] <= a[0] for a, b in zip(kf, kf[1:])):
            raise InputError("event keyframes need strictly increasing, non-negative frame indices")
        object.__setattr__(self, "keyframes", kf)

    @property
    def start(self) -> int:
        return self.keyframes[0][0]

    @property
    def end(self) -> int:
        return self.keyframes[-1][0]

    def active(self, frame: int) -> bool:
        return self.start <= frame <= self.end

    def center(self, frame: int) -> tuple[float, float]:
        f = [k[0] for k in self.keyframes]
        return (
            float(np.interp(frame, f, [k[1] for k in self.keyframes])),
            float(np.interp(frame, f, [k[2] for k in self.keyframes])),
        )

    def contains(self, frame, bx, by):
        return _inside(self.shape, self.center(frame), self.size, bx, by)

    def to_dict(self) -> dict:
        d = {"shape": self.shape, "size": list(self.size), "keyframes": [list(k) for k in self.keyframes], "label": self.label}
        if self.delta is not None:
            d["delta"] = list(self.delta)
        else:
            d["override"] = list(self.override)
        return d


@dataclass(frozen=True)
class PerturbationScript:
    events: tuple = ()

    def active(self, frame: int) -> list[Event]:
        return [e for e in self.events if e.active(frame)]

    def truth(self, frame: int, grid: GridDims) -> list[dict]:
        """Active footprints with centres in buffer and estimated-image coordinates."""
        out = []
        for e in self.active(frame):
            bx, by = e.center(frame)
            gx, gy = grid.buffer_to_grid(bx, by)
            out.append(
                {
                    "label": e.label,
                    "shape": e.shape,
                    "size": list(e.size),
                    "center_buffer": [round(bx, 4), round(by, 4)],
                    "center": [round(float(gx), 4), round(float(gy), 4)],
                }
            )
        return out


@dataclass(frozen=True, eq=False)
class RigConfig:
    buffer_size: tuple = (1024, 768)
    camera_size: tuple = (320, 240)
    roi: tuple = DEFAULT_ROI
    response: str = "gamma"
    gamma: tuple = (2.2, 2.0, 2.4)
    gain: tuple = (0.85, 0.9, 0.8)
    offset: tuple = (12.0, 10.0, 14.0)
    verhulst: tuple | None = None  # per channel (a, alpha, b, k) when response == "verhulst"
    vignette: float = 0.0
    patches: tuple = ()
    noise_sigma: float = 1.5
    seed: int = 0
    periphery: int = 8
    supersample: int = 4

    def __post_init__(self):
        if self.response not in ("gamma", "verhulst"):
            raise InputError(f"unknown response family {self.response!r}")
        if self.response == "verhulst" and (self.verhulst is None or np.shape(self.verhulst) != (3, 4)):
            raise InputError("verhulst response needs (3, 4) parameters")
        if self.noise_sigma < 0:
            raise InputError("noise sigma must be non-negative")
        if not (0.0 <= self.vignette < 1.0):
            raise InputError("vignette strength must lie in [0, 1)")
        cw, ch = self.camera_size
        for x, y in self.roi:
            if not (0 <= x <= cw - 1 and 0 <= y <= ch - 1):
                raise InputError(f"screen corner ({x}, {y}) falls outside the {cw}x{ch} camera frame")

    def with_(self, **changes) -> "RigConfig":
        return replace(self, **changes)

    @property
    def buffer_to_camera(self) -> HomographyParams:
        bw, bh = self.buffer_size
        return estimate_homography(list(zip(grid_corners((bw, bh)), self.roi)))

    @property
    def homography(self) -> HomographyParams:
        """Ground-truth camera -> buffer mapping."""
        return self.buffer_to_camera.inverse()

    def grid_to_camera(self, grid: GridDims) -> HomographyParams:
        """Ground-truth estimated-image -> camera mapping for ``grid``."""
        sx = grid.buffer_width / grid.grid_width
        sy = grid.buffer_height / grid.grid_height
        scale = HomographyParams.from_matrix([[sx, 0, 0.5 * sx - 0.5], [0, sy, 0.5 * sy - 0.5], [0, 0, 1]])
        return self.buffer_to_camera.compose(scale)

    def response_curve(self, z):
        """Ground-truth response (before spatial gain maps), float (..., 3)."""
        z = np.asarray(z, dtype=np.float64)
        if self.response == "gamma":
            g = np.asarray(self.gamma)
            return np.asarray(self.gain) * 255.0 * (np.clip(z, 0, 255) / 255.0) ** g + np.asarray(self.offset)
        p = np.asarray(self.verhulst, dtype=np.float64)
        return p[:, 0] / (1.0 + np.exp(-p[:, 1] * (z - p[:, 2]))) + p[:, 3]


class Rig:
    """Precomputed sampling geometry and gain maps for one ``RigConfig``."""

    def __init__(self, cfg: RigConfig):
        self.cfg = cfg
        cw, ch = cfg.camera_size
        bw, bh = cfg.buffer_size
        s = int(cfg.supersample)
        h = cfg.homography
        off = (np.arange(s) + 0.5) / s - 0.5
        v, u = np.mgrid[0:ch, 0:cw]
        su = np.broadcast_to(u[..., None, None] + off[None, None, None, :], (ch, cw, s, s)).reshape(ch, cw, s * s)
        sv = np.broadcast_to(v[..., None, None] + off[None, None, :, None], (ch, cw, s, s)).reshape(ch, cw, s * s)
        bx, by = map_points(h, su, sv)
        ix = np.floor(bx + 0.5).astype(np.int64)
        iy = np.floor(by + 0.5).astype(np.int64)
        valid = (ix >= 0) & (ix < bw) & (iy >= 0) & (iy < bh)
        self.sample_index = np.where(valid, iy * bw + ix, 0).reshape(ch * cw, s * s)
        self.sample_valid = valid.reshape(ch * cw, s * s)
        self.n_valid = self.sample_valid.sum(axis=1)
        self.coverage = (self.n_valid / (s * s)).reshape(ch, cw)
        self.center_bx, self.center_by = map_points(h, u.astype(float), v.astype(float))
        self.gain_map, self.offset_map = self._spatial_maps()

    def _spatial_maps(self):
        cfg = self.cfg
        bw, bh = cfg.buffer_size
        ch, cw = self.coverage.shape
        nx = (self.center_bx - (bw - 1) / 2.0) / (bw / 2.0)
        ny = (self.center_by - (bh - 1) / 2.0) / (bh / 2.0)
        rho2 = 0.5 * (nx * nx + ny * ny)  # 1 at the screen corners
        gain = np.repeat((1.0 - cfg.vignette * rho2)[..., None], 3, axis=2)
        offset = np.zeros((ch, cw, 3))
        for p in cfg.patches:
            m = p.contains(self.center_bx, self.center_by)
            gain[m] *= np.asarray(p.gain, dtype=np.float64)
            offset[m] += np.asarray(p.offset, dtype=np.float64)
        return gain, offset

    @cached_property
    def screen_mask(self) -> np.ndarray:
        return self.coverage > 0

    def area_sample(self, buffer) -> np.ndarray:
        """Mean buffer colour over each camera pixel's on-screen samples."""
        buf = as_image(buffer, "frame buffer")
        bw, bh = self.cfg.buffer_size
        if buf.shape[:2] != (bh, bw):
            raise InputError(f"rig expects a {bw}x{bh} frame buffer, got {buf.shape[1]}x{buf.shape[0]}")
        flat = buf.reshape(-1, 3)
        ch, cw = self.coverage.shape
        acc = np.zeros((ch * cw, 3))
        for j in range(self.sample_index.shape[1]):
            vals = flat[self.sample_index[:, j]].astype(np.float64)
            acc += vals * self.sample_valid[:, j, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = acc / self.n_valid[:, None]
        return np.nan_to_num(mean).reshape(ch, cw, 3)

    def event_mask(self, event: Event, frame: int) -> np.ndarray:
        return event.contains(frame, self.center_bx, self.center_by) & self.screen_mask

    def render(self, buffer, frame_index: int = 0, script: PerturbationScript | None = None, noise=True) -> np.ndarray:
        """Float camera irradiance before quantisation (noise optional)."""
        cfg = self.cfg
        obs = cfg.response_curve(self.area_sample(buffer)) * self.gain_map + self.offset_map
        if script is not None:
            for e in script.active(frame_index):
                m = self.event_mask(e, frame_index)
                if e.delta is not None:
                    obs[m] += np.asarray(e.delta, dtype=np.float64)
                else:
                    obs[m] = np.asarray(e.override, dtype=np.float64)
        cov = self.coverage[..., None]
        obs = cov * obs + (1.0 - cov) * cfg.periphery
        if noise and cfg.noise_sigma > 0:
            rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(frame_index)]))
            obs = obs + rng.normal(0.0, cfg.noise_sigma, obs.shape) * (cov > 0)
        return obs

    def capture(self, buffer, frame_index: int = 0, script: PerturbationScript | None = None) -> np.ndarray:
        return clamp_round_u8(self.render(buffer, frame_index, script))


_rig_cache: list = []


def rig_for(cfg: RigConfig) -> Rig:
    """Shared ``Rig`` for ``cfg`` (identity-keyed, small LRU)."""
    for rig in _rig_cache:
        if rig.cfg is cfg:
            return rig
    rig = Rig(cfg)
    _rig_cache.insert(0, rig)
    del _rig_cache[4:]
    return rig


def capture(cfg: RigConfig, buffer, frame_index: int = 0, script: PerturbationScript | None = None) -> np.ndarray:
    """Simulated camera image of ``buffer`` at ``frame_index``."""
    return rig_for(cfg).capture(buffer, frame_index, script)


def uniform_buffer(cfg: RigConfig, value) -> np.ndarray:
    bw, bh = cfg.buffer_size
    img = np.empty((bh, bw, 3), dtype=np.uint8)
    img[...] = value
    return img
