"""Named experiment scenarios for the virtual rig.

All layouts are fixed constants in screen (frame buffer) coordinates for the
default 1024x768 buffer and are scaled proportionally for other sizes.

=================  ==========================================================
vignette-only      uniform grey content, 35% corner fall-off, no events
stains-9           vignette plus nine reflective rectangles in a 3x3 layout
dragged-object     vignette plus one dark rectangle on a serpentine path
flashlights        vignette, one fixed lamp spot, two moving bright ellipses
landscape-content  vignette and stains under cycling landscape pictures,
                   one drifting shadow
=================  ==========================================================
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .errors import InputError
from .imaging import GridDims
from .rig import (
    CALIBRATION_FRAME_BASE,
    Event,
    PerturbationScript,
    RigConfig,
    StationaryPatch,
    rig_for,
    uniform_buffer,
)

SCENARIO_NAMES = ("vignette-only", "stains-9", "dragged-object", "flashlights", "landscape-content")

UNIFORM_LEVEL = 160
VIGNETTE = 0.35
DRAG_DELTA = -20
FLASH_DELTA = 70
SHADOW_DELTA = -40

# nine reflective patches: centres on a 3x3 lattice, reference 1024x768 coordinates
_STAIN_CENTRES = [(x, y) for y in (170, 384, 598) for x in (200, 512, 824)]
_STAIN_GAINS = (1.30, 1.22, 1.38, 1.26, 1.34, 1.20, 1.36, 1.28, 1.24)


@dataclass
class Scenario:
    name: str
    rig: RigConfig
    grid: GridDims
    script: PerturbationScript
    contents: list
    n_frames: int
    content_period: int = 0  # frames per content picture; 0 = first picture throughout
    params: dict = field(default_factory=dict)

    def content_index(self, frame: int) -> int:
        if self.content_period <= 0 or len(self.contents) == 1:
            return 0
        return (frame // self.content_period) % len(self.contents)

    def buffer(self, frame: int) -> np.ndarray:
        return self.contents[self.content_index(frame)]

    def truth(self, frame: int) -> list[dict]:
        return self.script.truth(frame, self.grid)

    def capture(self, frame: int, with_events=True) -> np.ndarray:
        return rig_for(self.rig).capture(self.buffer(frame), frame, self.script if with_events else None)

    def frames(self, start=0, stop=None, with_events=True) -> Iterator[tuple]:
        """Yield ``(index, buffer, camera, truth)``."""
        stop = self.n_frames if stop is None else stop
        for i in range(start, stop):
            yield i, self.buffer(i), self.capture(i, with_events), (self.truth(i) if with_events else [])

    def stationary_frames(self, n: int, base: int = 500_000) -> Iterator[tuple]:
        """Frames with the scenario's content but no events, on separate noise streams."""
        for j in range(n):
            i = base + j
            buf = self.contents[j % len(self.contents)] if self.content_period else self.contents[0]
            yield i, buf, rig_for(self.rig).capture(buf, i, None), []

    def blank_capture(self) -> np.ndarray:
        return rig_for(self.rig).capture(uniform_buffer(self.rig, 255), CALIBRATION_FRAME_BASE)

    def sample_captures(self, plan, n_average: int = 1) -> list:
        """One capture (or a stack of ``n_average``) per sample intensity."""
        rig = rig_for(self.rig)
        out = []
        for i, z in enumerate(plan):
            buf = uniform_buffer(self.rig, int(z))
            frames = [rig.capture(buf, CALIBRATION_FRAME_BASE + 1 + 64 * i + j) for j in range(n_average)]
            out.append(frames[0] if n_average == 1 else np.stack(frames))
        return out


def _scaler(buffer_size):
    sx = buffer_size[0] / 1024.0
    sy = buffer_size[1] / 768.0
    return lambda x, y: (x * sx, y * sy)


def _serpentine(buffer_size, n_frames, margin=(120, 110), rows=4):
    """Boustrophedon keyframes sweeping the screen in ``rows`` passes."""
    bw, bh = buffer_size
    mx, my = margin[0] * bw / 1024, margin[1] * bh / 768
    ys = np.linspace(my, bh - my, rows)
    pts = []
    for r, y in enumerate(ys):
        xs = (mx, bw - mx) if r % 2 == 0 else (bw - mx, mx)
        pts += [(xs[0], y), (xs[1], y)]
    seg = np.hypot(np.diff([p[0] for p in pts]), np.diff([p[1] for p in pts]))
    t = np.concatenate([[0], np.cumsum(seg)]) / seg.sum()
    frames = np.round(t * (n_frames - 1)).astype(int)
    kf = []
    for f, (x, y) in zip(frames, pts):
        if kf and f <= kf[-1][0]:
            continue
        kf.append((int(f), float(x), float(y)))
    return tuple(kf)


def _orbit(center, radius, n_frames, phase, turns, step=10):
    kf = []
    for f in list(range(0, n_frames, step)) + [n_frames - 1]:
        if kf and f <= kf[-1][0]:
            continue
        a = phase + 2 * np.pi * turns * f / max(1, n_frames - 1)
        kf.append((f, center[0] + radius[0] * np.cos(a), center[1] + radius[1] * np.sin(a)))
    return tuple(kf)


def landscape(buffer_size, seed: int) -> np.ndarray:
    """Procedural landscape picture: sky, sun, ridges, lake and textured grass."""
    bw, bh = buffer_size
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:bh, 0:bw].astype(np.float64)
    u, v = x / bw, y / bh
    img = np.zeros((bh, bw, 3))
    sky_top = np.array([40, 90, 200]) + rng.uniform(-20, 20, 3)
    sky_low = np.array([235, 225, 210]) + rng.uniform(-15, 15, 3)
    img[:] = sky_top + (sky_low - sky_top) * np.clip(v / 0.55, 0, 1)[..., None]

    sun = (rng.uniform(0.15, 0.85), rng.uniform(0.08, 0.25))
    d = np.hypot((u - sun[0]) * bw / bh, v - sun[1])
    img[d < 0.06] = (255, 250, 220)

    def ridge(base, amp, freqs):
        r = np.full(bw, base)
        for f in freqs:
            r += amp / f * np.sin(2 * np.pi * f * u[0] + rng.uniform(0, 2 * np.pi))
        return r

    far = ridge(rng.uniform(0.35, 0.45), 0.12, (1, 2.3, 5.1, 11.7))
    near = ridge(rng.uniform(0.55, 0.65), 0.10, (1.4, 3.7, 8.2, 17.3))
    img[v > far[None, :]] = np.array([95, 105, 135]) + rng.uniform(-15, 15, 3)
    snow = (v > far[None, :]) & (v < far[None, :] + 0.03)
    img[snow] = (245, 245, 250)
    ground = v > near[None, :]
    grass = np.array([40, 110, 35]) + rng.uniform(-15, 15, 3)
    tex = rng.normal(0, 1, (bh // 4 + 1, bw // 4 + 1)).repeat(4, 0).repeat(4, 1)[:bh, :bw]
    img[ground] = grass + 30 * tex[ground][:, None]
    shade = ground & (v > 0.85)
    img[shade] *= 0.25  # deep shadow strip in the foreground
    lake = ground & (np.abs(u - rng.uniform(0.3, 0.7)) < 0.18) & (v > 0.7) & (v < 0.82)
    img[lake] = np.array([20, 60, 120]) + 25 * tex[lake][:, None]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def scenario(name: str, **overrides) -> Scenario:
    """Build a named scenario.

    Recognised overrides: ``buffer_size``, ``camera_size``, ``grid_size``,
    ``n_frames``, ``seed``, ``noise_sigma``, ``vignette``, ``delta`` (event
    intensity change, scalar or per-channel), ``level`` (uniform content) and
    ``response`` / ``verhulst`` for the rig. Unknown keys are an error.
    """
    if name not in SCENARIO_NAMES:
        raise InputError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIO_NAMES)}")
    known = {
        "buffer_size", "camera_size", "grid_size", "n_frames", "seed", "noise_sigma",
        "vignette", "delta", "level", "response", "verhulst", "roi",
    }
    bad = set(overrides) - known
    if bad:
        raise InputError(f"unknown scenario override(s): {', '.join(sorted(bad))}")

    buffer_size = tuple(overrides.get("buffer_size", (1024, 768)))
    camera_size = tuple(overrides.get("camera_size", (320, 240)))
    grid_size = tuple(overrides.get("grid_size", camera_size))
    grid = GridDims(*buffer_size, *grid_size)
    sc = _scaler(buffer_size)
    rig_kw = {
        "buffer_size": buffer_size,
        "camera_size": camera_size,
        "vignette": overrides.get("vignette", VIGNETTE),
        "noise_sigma": overrides.get("noise_sigma", 1.5),
        "seed": int(overrides.get("seed", 0)),
    }
    if "roi" in overrides:
        rig_kw["roi"] = tuple(tuple(p) for p in overrides["roi"])
    elif camera_size != (320, 240):
        kx, ky = camera_size[0] / 320.0, camera_size[1] / 240.0
        rig_kw["roi"] = tuple((x * kx, y * ky) for x, y in RigConfig().roi)
    for k in ("response", "verhulst"):
        if k in overrides:
            rig_kw[k] = overrides[k]

    level = overrides.get("level", UNIFORM_LEVEL)
    stains = tuple(
        StationaryPatch("rect", sc(cx, cy), sc(110, 80), gain=(g, g, g))
        for (cx, cy), g in zip(_STAIN_CENTRES, _STAIN_GAINS)
    )

    def delta_of(default):
        d = overrides.get("delta", default)
        return tuple(float(v) for v in (d if np.ndim(d) else (d, d, d)))

    events: tuple = ()
    period = 0
    params: dict = {}
    if name == "vignette-only":
        n = overrides.get("n_frames", 200)
        patches: tuple = ()
    elif name == "stains-9":
        n = overrides.get("n_frames", 200)
        patches = stains
    elif name == "dragged-object":
        n = overrides.get("n_frames", 300)
        patches = ()
        delta = delta_of(DRAG_DELTA)
        events = (Event("rect", sc(56, 56), _serpentine(buffer_size, n), delta=delta, label="object"),)
        params["delta"] = delta
    elif name == "flashlights":
        n = overrides.get("n_frames", 300)
        patches = (StationaryPatch("ellipse", sc(150, 130), sc(150, 150), offset=(50.0, 50.0, 50.0)),)
        delta = delta_of(FLASH_DELTA)
        events = (
            Event("ellipse", sc(80, 80), tuple((f, *sc(*xy)) for f, *xy in _orbit((330, 470), (170, 170), n, 0.0, 1.0)), delta=delta, label="torch-1"),
            Event("ellipse", sc(80, 80), tuple((f, *sc(*xy)) for f, *xy in _orbit((760, 400), (170, 230), n, np.pi / 2, 1.5)), delta=delta, label="torch-2"),
        )
        params["delta"] = delta
    else:  # landscape-content
        n = overrides.get("n_frames", 300)
        patches = stains
        delta = delta_of(SHADOW_DELTA)
        events = (Event("ellipse", sc(70, 70), _serpentine(buffer_size, n, rows=5), delta=delta, label="shadow"),)
        period = 60
        params["delta"] = delta

    rig = RigConfig(patches=patches, **rig_kw)
    if name == "landscape-content":
        contents = [landscape(buffer_size, 1000 + int(rig.seed) * 10 + i) for i in range(5)]
    else:
        contents = [uniform_buffer(rig, level)]
    return Scenario(name, rig, grid, PerturbationScript(events), contents, int(n), period, params)
