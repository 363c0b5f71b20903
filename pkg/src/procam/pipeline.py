"""Calibration phases, the frame loop, bundles, metrics and benchmarking.

A calibration bundle is a directory:

    meta.json               buffer, grid and camera dimensions
    homography.bin          estimated-image -> camera homography
    table.bin               correspondence table
    model-<kind>.json/.bin  photometric model(s), one per kind
    lut.bin                 colour tables (local model only)
    thresholds.json         swept threshold triples keyed by model kind
"""
from __future__ import annotations

import json
import logging
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import _kernels
from .corners import boundary, detect_region_of_interest, segment_bright
from .detection import (
    DetectionReport,
    SpotFilterConfig,
    ThresholdTriple,
    connected_components,
    detect_frame,
    filter_spots,
    neighborhood_filter,
)
from .errors import BundleIOError, CalibrationError, ConfigError, InputError, ProcamError
from .geometry import (
    build_correspondence_table,
    estimate_homography,
    grid_corners,
    load_homography,
    load_table,
    save_homography,
    save_table,
)
from .imageio import iter_ppm_stream, read_image, write_image
from .imaging import GridDims
from .lut import build_lut, estimate_image_lut, load_lut, save_lut
from .photometry import SamplePlan, calibrate, estimate_image, load_model, save_model
from .scenarios import SCENARIO_NAMES, scenario

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

MATCH_RADIUS = 5.0
BENCH_MIN_FRAMES = 500


@dataclass
class PipelineConfig:
    buffer_width: int = 1024
    buffer_height: int = 768
    grid_width: int = 320
    grid_height: int = 240
    camera_width: int = 320
    camera_height: int = 240
    model: str = "local"
    sample_plan: tuple = (32, 96, 160, 224)
    calibration_frames: int = 1
    thresholds: ThresholdTriple | None = None
    spot_a1: int | None = None
    spot_a2: int | None = None
    parallelism: int = field(default_factory=lambda: max(1, os.cpu_count() or 1))
    bundle: str = "bundle"
    frames: str | None = None
    report: str | None = None
    scenario: str = "stains-9"
    scenario_delta: float | None = None
    seed: int = 0
    n_frames: int | None = None
    match_radius: float = MATCH_RADIUS
    sweep_frames: int = 200
    bench_frames: int = BENCH_MIN_FRAMES
    timings: bool = False

    def __post_init__(self):
        for k in ("buffer_width", "buffer_height", "grid_width", "grid_height", "camera_width", "camera_height"):
            if int(getattr(self, k)) < 1:
                raise ConfigError(f"{k} must be positive")
        if self.grid_width > self.buffer_width or self.grid_height > self.buffer_height:
            raise ConfigError("the grid cannot be finer than the frame buffer")
        if self.model not in ("local", "global"):
            raise ConfigError(f"model must be 'local' or 'global', not {self.model!r}")
        if int(self.parallelism) < 1:
            raise ConfigError("parallelism must be at least 1")
        if int(self.calibration_frames) < 1:
            raise ConfigError("calibration_frames must be at least 1")
        if self.scenario not in SCENARIO_NAMES:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIO_NAMES)}")
        if self.thresholds is not None:
            try:
                self.thresholds = ThresholdTriple.of(self.thresholds)
            except InputError as e:
                raise ConfigError(str(e)) from e
        try:
            self.sample_plan = SamplePlan(tuple(int(v) for v in self.sample_plan)).intensities
        except (InputError, TypeError, ValueError) as e:
            raise ConfigError(f"bad sample_plan: {e}") from e

    @property
    def grid(self) -> GridDims:
        return GridDims(self.buffer_width, self.buffer_height, self.grid_width, self.grid_height)

    @property
    def camera_size(self) -> tuple[int, int]:
        return (self.camera_width, self.camera_height)

    @property
    def plan(self) -> SamplePlan:
        return SamplePlan(tuple(self.sample_plan))

    def spot_filter(self) -> SpotFilterConfig:
        base = SpotFilterConfig.for_grid(self.grid_width, self.grid_height)
        a1 = base.a1 if self.spot_a1 is None else int(self.spot_a1)
        a2 = base.a2 if self.spot_a2 is None else int(self.spot_a2)
        try:
            return SpotFilterConfig(a1, a2)
        except InputError as e:
            raise ConfigError(str(e)) from e

    def with_(self, **changes) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = list(self.thresholds) if self.thresholds is not None else None
        d["sample_plan"] = list(self.sample_plan)
        return d


CONFIG_KEYS = tuple(f.name for f in fields(PipelineConfig))


def load_config(path=None, **overrides) -> PipelineConfig:
    """Read a TOML config (flat keys named as ``PipelineConfig`` fields).

    Keyword overrides (the CLI flags) win over file values; ``None`` means
    "not given".
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                values = tomllib.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"invalid TOML in {path}: {e}") from e
        unknown = set(values) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e


# --- bundle ---------------------------------------------------------------------


@dataclass
class Bundle:
    """Loaded calibration artifacts."""

    grid: GridDims
    camera_size: tuple
    homography: object = None
    table: object = None
    models: dict = field(default_factory=dict)
    lut: object = None
    thresholds: dict = field(default_factory=dict)

    def estimator(self, kind: str):
        """The fast path for local models, direct evaluation for global ones."""
        if kind == "local" and self.lut is not None:
            return self.lut
        if kind not in self.models:
            raise ConfigError(f"bundle has no {kind} photometric model; run calibrate-photometry --model {kind}")
        return self.models[kind]


def _write_json(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise BundleIOError(f"cannot write {path}: {e}") from e


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except OSError as e:
        raise BundleIOError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise BundleIOError(f"corrupt JSON in {path}: {e}") from e


def _meta(cfg: PipelineConfig) -> dict:
    g = cfg.grid
    return {
        "buffer": list(g.buffer_size),
        "grid": list(g.grid_size),
        "camera": list(cfg.camera_size),
    }


def _bundle_dir(cfg: PipelineConfig, create=False) -> Path:
    d = Path(cfg.bundle)
    if create:
        try:
            d.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise BundleIOError(f"cannot create bundle directory {d}: {e}") from e
    return d


def load_bundle(cfg: PipelineConfig, need_photometry=True) -> Bundle:
    d = _bundle_dir(cfg)
    if not (d / "meta.json").exists() or not (d / "table.bin").exists():
        raise ConfigError(f"no geometric calibration in {d}; run calibrate-geometry first")
    meta = _read_json(d / "meta.json")
    if [*cfg.grid.buffer_size, *cfg.grid.grid_size, *cfg.camera_size] != [*meta["buffer"], *meta["grid"], *meta["camera"]]:
        raise ConfigError(f"bundle {d} was calibrated for {meta}, config says {_meta(cfg)}")
    b = Bundle(cfg.grid, tuple(meta["camera"]))
    b.homography = load_homography(d / "homography.bin")
    b.table = load_table(d / "table.bin")
    for kind in ("local", "global"):
        if (d / f"model-{kind}.json").exists():
            b.models[kind] = load_model(d, stem=f"model-{kind}")
    if (d / "lut.bin").exists():
        b.lut = load_lut(d / "lut.bin", cfg.grid.buffer_size)
    if (d / "thresholds.json").exists():
        b.thresholds = {k: ThresholdTriple.of(v) for k, v in _read_json(d / "thresholds.json").items()}
    if need_photometry and not b.models:
        raise ConfigError(f"no photometric calibration in {d}; run calibrate-photometry first")
    return b


# --- calibration sources ------------------------------------------------------


def make_scenario(cfg: PipelineConfig, name=None, **extra):
    kw = dict(
        buffer_size=cfg.grid.buffer_size,
        camera_size=cfg.camera_size,
        grid_size=cfg.grid.grid_size,
        seed=cfg.seed,
    )
    if cfg.n_frames is not None:
        kw["n_frames"] = cfg.n_frames
    if cfg.scenario_delta is not None:
        kw["delta"] = cfg.scenario_delta
    kw.update(extra)
    return scenario(name or cfg.scenario, **kw)


def _sample_name(z: int) -> str:
    return f"sample_{int(z):03d}"


def _find_image(directory: Path, stem: str) -> Path:
    for ext in (".ppm", ".png"):
        p = directory / (stem + ext)
        if p.exists():
            return p
    raise BundleIOError(f"missing {stem}.ppm or {stem}.png in {directory}")


def _dump_diagnostics(directory: Path, blank) -> Path:
    out = directory / "diagnostics"
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_image(out / "blank.ppm", blank)
        mask = segment_bright(blank)
        write_image(out / "otsu_mask.png", mask)
        write_image(out / "boundary.png", boundary(mask))
    except (OSError, ProcamError) as e:
        log.error("could not write diagnostics: %s", e)
    return out


def run_geometric_calibration(cfg: PipelineConfig, blank=None, rig_scenario=None) -> Bundle:
    """Find the projected quad, fit the homography and build the table.

    ``blank`` is a captured blank frame; without it one is produced by the
    simulated rig of ``rig_scenario`` (default: the configured scenario).
    """
    if blank is None:
        sc = rig_scenario or make_scenario(cfg)
        blank = sc.blank_capture()
    d = _bundle_dir(cfg, create=True)
    h, w = blank.shape[:2]
    if (w, h) != cfg.camera_size:
        raise ConfigError(f"blank capture is {w}x{h}, config expects camera {cfg.camera_size}")
    try:
        roi = detect_region_of_interest(blank)
        hom = estimate_homography(list(zip(grid_corners(cfg.grid.grid_size), roi.corners)))
        table = build_correspondence_table(hom, cfg.grid.grid_size, cfg.camera_size)
    except CalibrationError as e:
        where = _dump_diagnostics(d, blank)
        raise type(e)(f"{e} (diagnostic images in {where})") from e
    save_homography(d / "homography.bin", hom)
    save_table(d / "table.bin", table)
    _write_json(d / "meta.json", _meta(cfg) | {"roi": [list(map(float, c)) for c in roi.corners]})
    log.info("geometric calibration: corners %s", [tuple(round(v, 2) for v in c) for c in roi.corners])
    return Bundle(cfg.grid, cfg.camera_size, hom, table)


def run_photometric_calibration(cfg: PipelineConfig, captures=None, rig_scenario=None, kind=None) -> Bundle:
    """Fit the configured model kind from the four uniform sample captures.

    ``captures`` is a list of images (or frame stacks); without it the
    simulated rig projects the sample plan.
    """
    kind = kind or cfg.model
    b = load_bundle(cfg, need_photometry=False)
    if captures is None:
        sc = rig_scenario or make_scenario(cfg)
        captures = sc.sample_captures(cfg.plan.intensities, cfg.calibration_frames)
    model = calibrate(kind, captures, b.table, cfg.grid, cfg.plan)
    d = _bundle_dir(cfg)
    save_model(d, model, stem=f"model-{kind}")
    b.models[kind] = model
    if kind == "local":
        b.lut = build_lut(model)
        save_lut(d / "lut.bin", b.lut)
    return b


def read_blank(directory):
    return read_image(_find_image(Path(directory), "blank"))


def read_calibration_dir(directory, plan: SamplePlan):
    """Blank and sample captures from an exported calibration directory."""
    d = Path(directory)
    blank = read_blank(d)
    samples = [read_image(_find_image(d, _sample_name(z))) for z in plan.intensities]
    return blank, samples


# --- frame sources --------------------------------------------------------------


def _numbered(directory: Path, prefix: str) -> dict:
    pat = re.compile(rf"^{prefix}_(\d+)\.(ppm|png)$")
    out = {}
    for p in directory.iterdir():
        m = pat.match(p.name)
        if m:
            out[int(m.group(1))] = p
    return out


def load_ground_truth(path) -> dict:
    data = _read_json(Path(path))
    return {int(k): v for k, v in data["frames"].items()}


def directory_frames(directory, buffer=None) -> Iterator[tuple]:
    """Frames from ``camera_NNNNN`` images, with ``buffer_NNNNN`` images
    where the content changes (the last buffer carries forward).

    Ground truth is read from ``ground_truth.json`` beside or above the
    frames when present.
    """
    d = Path(directory)
    if not d.is_dir():
        raise BundleIOError(f"frame directory {d} does not exist")
    cams = _numbered(d, "camera")
    if not cams:
        raise InputError(f"no camera_NNNNN.ppm/png frames in {d}")
    bufs = _numbered(d, "buffer")
    truth = None
    for cand in (d / "ground_truth.json", d.parent / "ground_truth.json"):
        if cand.exists():
            truth = load_ground_truth(cand)
            break
    current = buffer
    for i in sorted(cams):
        earlier = [j for j in bufs if j <= i]
        if earlier and (current is None or max(earlier) == i):
            current = read_image(bufs[max(earlier)])
        if current is None:
            raise InputError(f"no frame buffer for camera frame {i}; export buffer images or pass --buffer")
        yield i, current, read_image(cams[i]), (truth.get(i, []) if truth is not None else None)


def stream_frames(stream, buffer=None) -> Iterator[tuple]:
    """Concatenated P6 frames: alternating buffer and camera images, or
    camera images only when a fixed ``buffer`` is supplied."""
    it = iter_ppm_stream(stream)
    i = 0
    for img in it:
        if buffer is None:
            cam = next(it, None)
            if cam is None:
                raise InputError("stream ended after a buffer frame with no camera frame")
            yield i, img, cam, None
        else:
            yield i, buffer, img, None
        i += 1


def scenario_frames(sc, start=0, stop=None, with_events=True) -> Iterator[tuple]:
    yield from sc.frames(start, stop, with_events)


# --- detection loop and metrics ---------------------------------------------------


@dataclass
class RunMetrics:
    frames: int = 0
    mean_latency_ms: float = 0.0
    p95_latency_ms: float = 0.0
    detection_rate: float | None = None
    scored_frames: int = 0
    detected_frames: int = 0
    false_positives: int = 0
    max_centroid_error: float | None = None
    throughput_fps: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def match_frame(centroids, truth, radius=MATCH_RADIUS):
    """Greedy nearest matching of truth footprints to accepted centroids.

    Returns ``(all_matched, errors, unmatched_centroids)``.
    """
    cs = [tuple(c[:2]) for c in centroids]
    free = list(range(len(cs)))
    errors = []
    ok = True
    pairs = []
    for ti, t in enumerate(truth):
        tx, ty = t["center"]
        for ci in free:
            pairs.append((float(np.hypot(cs[ci][0] - tx, cs[ci][1] - ty)), ti, ci))
    pairs.sort()
    used_t, used_c = set(), set()
    for dist, ti, ci in pairs:
        if dist > radius or ti in used_t or ci in used_c:
            continue
        used_t.add(ti)
        used_c.add(ci)
        errors.append(dist)
    ok = len(used_t) == len(truth)
    return ok, errors, len(cs) - len(used_c)


class MetricsAccumulator:
    def __init__(self, radius=MATCH_RADIUS):
        self.radius = radius
        self.latencies: list = []
        self.scored = 0
        self.detected = 0
        self.false_positives = 0
        self.errors: list = []
        self.wall = 0.0

    def add(self, report: DetectionReport, truth, wall_s: float) -> None:
        self.latencies.append(wall_s * 1e3)
        self.wall += wall_s
        if truth is None:
            return
        ok, errs, unmatched = match_frame(report.centroids, truth, self.radius)
        self.false_positives += unmatched
        if truth:
            self.scored += 1
            self.detected += ok
            self.errors += errs

    def result(self) -> RunMetrics:
        n = len(self.latencies)
        if n == 0:
            return RunMetrics()
        lat = np.asarray(self.latencies)
        return RunMetrics(
            frames=n,
            mean_latency_ms=float(lat.mean()),
            p95_latency_ms=float(np.percentile(lat, 95)),
            detection_rate=(100.0 * self.detected / self.scored) if self.scored else None,
            scored_frames=self.scored,
            detected_frames=self.detected,
            false_positives=self.false_positives,
            max_centroid_error=max(self.errors) if self.errors else None,
            throughput_fps=n / self.wall if self.wall > 0 else 0.0,
        )


def resolve_thresholds(cfg: PipelineConfig, bundle: Bundle, kind: str) -> ThresholdTriple:
    if cfg.thresholds is not None:
        return cfg.thresholds
    if kind in bundle.thresholds:
        return bundle.thresholds[kind]
    raise ConfigError(f"no thresholds for the {kind} model; pass --thresholds or run sweep-thresholds")


def run_detection(cfg: PipelineConfig, frames: Iterable, bundle: Bundle | None = None, kind=None, sink=None):
    """Detect over ``frames`` of ``(index, buffer, camera, truth-or-None)``.

    Each report is passed to ``sink`` (if given) as soon as its frame is done.
    Returns ``(reports, RunMetrics)``.
    """
    kind = kind or cfg.model
    bundle = bundle or load_bundle(cfg)
    estimator = bundle.estimator(kind)
    u = resolve_thresholds(cfg, bundle, kind)
    spot_cfg = cfg.spot_filter()
    _kernels.set_threads(cfg.parallelism)
    acc = MetricsAccumulator(cfg.match_radius)
    reports = []
    for i, buf, cam, truth in frames:
        t0 = time.perf_counter()
        rep = detect_frame(buf, cam, estimator, bundle.table, u, spot_cfg, i)
        acc.add(rep, truth, time.perf_counter() - t0)
        reports.append(rep)
        if sink is not None:
            sink(rep)
    return reports, acc.result()


def rescore(reports, truth_by_frame: dict, radius=MATCH_RADIUS) -> float | None:
    """Detection rate recomputed from serialised reports alone."""
    scored = hit = 0
    for r in reports:
        truth = truth_by_frame.get(r.frame_index, [])
        if not truth:
            continue
        scored += 1
        hit += match_frame(r.centroids, truth, radius)[0]
    return 100.0 * hit / scored if scored else None


# --- threshold sweep --------------------------------------------------------------


def _count_spots(diffs, u, spot_cfg) -> int:
    u = np.asarray(u)
    total = 0
    for d in diffs:
        seg = (d > u).any(axis=2).astype(np.uint8)
        comps = connected_components(neighborhood_filter(seg))
        total += len(filter_spots([s for s in comps if s.area >= spot_cfg.a1], spot_cfg))
    return total


def sweep_thresholds(cfg: PipelineConfig, frames: Iterable, bundle: Bundle | None = None, kind=None, save=True):
    """Lowest per-channel thresholds giving zero accepted spots on stationary frames.

    Starts from the per-channel maximum absolute difference (no pixel can
    fire above it), then lowers red, green and blue in turn by bisection
    while the accepted-spot count stays at zero. Returns
    ``(triple, pixel_bound)``.
    """
    kind = kind or cfg.model
    bundle = bundle or load_bundle(cfg)
    est = bundle.estimator(kind)
    table = bundle.table
    _kernels.set_threads(cfg.parallelism)
    diffs = []
    for _, buf, cam, _truth in frames:
        e = estimate_image_lut(buf, est) if est is bundle.lut else estimate_image(buf, est)
        c = cam[table.ys, table.xs]
        diffs.append(np.abs(e.astype(np.int16) - c.astype(np.int16)))
    if not diffs:
        raise InputError("threshold sweep needs at least one stationary frame")
    pixel_bound = [int(v) for v in np.max([d.max(axis=(0, 1)) for d in diffs], axis=0)]
    spot_cfg = cfg.spot_filter()
    u = list(pixel_bound)
    for c in range(3):
        lo, hi = 0, u[c]
        while lo < hi:
            mid = (lo + hi) // 2
            trial = list(u)
            trial[c] = mid
            if _count_spots(diffs, trial, spot_cfg) == 0:
                hi = mid
            else:
                lo = mid + 1
        u[c] = lo
    triple = ThresholdTriple.of(u)
    if save:
        d = _bundle_dir(cfg)
        stored = _read_json(d / "thresholds.json") if (d / "thresholds.json").exists() else {}
        stored[kind] = list(triple)
        _write_json(d / "thresholds.json", stored)
        bundle.thresholds[kind] = triple
    return triple, ThresholdTriple.of(pixel_bound)


# --- benchmark ----------------------------------------------------------------------


def _time_path(frames, estimator, table, u, spot_cfg) -> np.ndarray:
    lat = []
    for i, (buf, cam) in enumerate(frames):
        t0 = time.perf_counter()
        detect_frame(buf, cam, estimator, table, u, spot_cfg, i)
        lat.append(time.perf_counter() - t0)
    return np.asarray(lat) * 1e3


def bench(cfg: PipelineConfig, bundle: Bundle | None = None, pool_size=16) -> dict:
    """Time the LUT fast path and the direct path over synthetic frames.

    A pool of distinct simulated frames is cycled up to ``bench_frames``;
    frame synthesis is not timed.
    """
    bundle = bundle or load_bundle(cfg)
    if bundle.lut is None or "local" not in bundle.models:
        raise ConfigError("bench needs a local model and its LUT; run calibrate-photometry --model local")
    n = max(BENCH_MIN_FRAMES, int(cfg.bench_frames))
    sc = make_scenario(cfg)
    pool = [(buf, cam) for _, buf, cam, _ in sc.frames(0, min(pool_size, sc.n_frames))]
    frames = [pool[i % len(pool)] for i in range(n)]
    u = bundle.thresholds.get("local") or cfg.thresholds or ThresholdTriple(37, 25, 34)
    spot_cfg = cfg.spot_filter()
    _kernels.warmup()

    result: dict = {"frames": n, "grid": list(cfg.grid.grid_size), "buffer": list(cfg.grid.buffer_size)}
    threads = _kernels.set_threads(cfg.parallelism)
    result["parallelism"] = threads
    lut_ms = _time_path(frames, bundle.lut, bundle.table, u, spot_cfg)
    direct_ms = _time_path(frames, bundle.models["local"], bundle.table, u, spot_cfg)
    result["lut"] = {
        "mean_latency_ms": float(lut_ms.mean()),
        "p95_latency_ms": float(np.percentile(lut_ms, 95)),
        "throughput_fps": float(1e3 / lut_ms.mean()),
    }
    result["direct"] = {
        "mean_latency_ms": float(direct_ms.mean()),
        "p95_latency_ms": float(np.percentile(direct_ms, 95)),
        "throughput_fps": float(1e3 / direct_ms.mean()),
    }
    result["lut_over_direct"] = float(lut_ms.mean() / direct_ms.mean())
    result["reference_latency_ms"] = 28.0
    result["meets_reference"] = bool(lut_ms.mean() <= 28.0)
    if threads > 1:
        _kernels.set_threads(1)
        single = _time_path(frames, bundle.lut, bundle.table, u, spot_cfg)
        result["lut_single_thread"] = {
            "mean_latency_ms": float(single.mean()),
            "throughput_fps": float(1e3 / single.mean()),
        }
        _kernels.set_threads(threads)
    result["cpu_count"] = os.cpu_count()
    return result


# --- scenario export --------------------------------------------------------------


def export_scenario(sc, out_dir, plan: SamplePlan, calibration_frames=1, n_frames=None) -> Path:
    """Write calibration captures, numbered frames and ground truth."""
    out = Path(out_dir)
    cal = out / "calibration"
    fr = out / "frames"
    try:
        cal.mkdir(parents=True, exist_ok=True)
        fr.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise BundleIOError(f"cannot create {out}: {e}") from e
    write_image(cal / "blank.ppm", sc.blank_capture())
    for z, cap in zip(plan.intensities, sc.sample_captures(plan.intensities, calibration_frames)):
        img = cap if cap.ndim == 3 else np.clip(np.rint(cap.mean(axis=0)), 0, 255).astype(np.uint8)
        write_image(cal / (_sample_name(z) + ".ppm"), img)
    truth = {}
    last_content = None
    for i, buf, cam, t in sc.frames(0, n_frames):
        k = sc.content_index(i)
        if k != last_content:
            write_image(fr / f"buffer_{i:05d}.ppm", buf)
            last_content = k
        write_image(fr / f"camera_{i:05d}.ppm", cam)
        truth[str(i)] = t
    _write_json(
        out / "ground_truth.json",
        {
            "scenario": sc.name,
            "seed": int(sc.rig.seed),
            "buffer": list(sc.grid.buffer_size),
            "grid": list(sc.grid.grid_size),
            "camera": list(sc.rig.camera_size),
            "match_radius": MATCH_RADIUS,
            "frames": truth,
        },
    )
    return out
