"""Command-line front end: ``procam <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 calibration failure,
4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .errors import BundleIOError, ConfigError, ProcamError
from .imageio import read_image
from .pipeline import (
    directory_frames,
    export_scenario,
    load_bundle,
    load_config,
    make_scenario,
    read_blank,
    read_calibration_dir,
    run_detection,
    run_geometric_calibration,
    run_photometric_calibration,
    stream_frames,
    sweep_thresholds,
)
from .pipeline import bench as run_bench

log = logging.getLogger("procam")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--bundle", help="calibration bundle directory")
    p.add_argument("--model", choices=("local", "global"), help="photometric model kind")
    p.add_argument("--thresholds", help="per-channel thresholds R,G,B")
    p.add_argument("--seed", type=int, help="simulator seed")
    p.add_argument("--parallelism", type=int, help="kernel threads")
    p.add_argument("--frames", help="frame directory, or - for a P6 stream on stdin")
    p.add_argument("--report", help="write JSON-lines reports here instead of stdout")
    p.add_argument("--scenario", help="simulated scenario used when no frames are given")
    p.add_argument("--n-frames", type=int, dest="n_frames", help="scenario length")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="procam", description="Detect moving shadows and light spots on a projection screen.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate-geometry", parents=[common], help="locate the screen and build the correspondence table")
    p.add_argument("--calibration", help="directory holding blank.ppm (default: simulate)")

    p = sub.add_parser("calibrate-photometry", parents=[common], help="fit transfer functions and build colour tables")
    p.add_argument("--calibration", help="directory holding sample_NNN.ppm captures (default: simulate)")
    p.add_argument("--calibration-frames", type=int, dest="calibration_frames", help="captures averaged per sample")

    p = sub.add_parser("detect", parents=[common], help="run detection and emit JSON-lines reports")
    p.add_argument("--buffer", help="fixed frame buffer image for camera-only input")
    p.add_argument("--timings", action="store_true", default=None, help="include stage timings in reports")
    p.add_argument("--no-events", action="store_true", help="simulate the scenario without its moving perturbations")

    p = sub.add_parser("simulate", parents=[common], help="export a scenario as PPM frames plus ground truth")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--calibration-frames", type=int, dest="calibration_frames")

    p = sub.add_parser("bench", parents=[common], help="time the LUT and direct estimation paths")
    p.add_argument("--bench-frames", type=int, dest="bench_frames")

    p = sub.add_parser("sweep-thresholds", parents=[common], help="find the zero-false-positive threshold triple")
    p.add_argument("--sweep-frames", type=int, dest="sweep_frames", help="stationary frames to simulate")
    p.add_argument("--buffer", help="fixed frame buffer image for camera-only input")
    return parser


def _config(args):
    keys = (
        "bundle", "model", "thresholds", "seed", "parallelism", "frames", "report", "scenario",
        "n_frames", "calibration_frames", "bench_frames", "sweep_frames", "timings",
    )
    return load_config(args.config, **{k: getattr(args, k, None) for k in keys})


def _frames(cfg, args, with_events=True):
    buffer = read_image(args.buffer) if getattr(args, "buffer", None) else None
    if cfg.frames == "-":
        return stream_frames(sys.stdin.buffer, buffer)
    if cfg.frames:
        return directory_frames(cfg.frames, buffer)
    sc = make_scenario(cfg)
    return sc.frames(0, None, with_events)


def cmd_calibrate_geometry(cfg, args):
    blank = None
    if args.calibration:
        blank = read_blank(args.calibration)
    b = run_geometric_calibration(cfg, blank=blank)
    print(json.dumps({"bundle": str(cfg.bundle), "homography": list(b.homography.p)}))


def cmd_calibrate_photometry(cfg, args):
    captures = None
    if args.calibration:
        _, captures = read_calibration_dir(args.calibration, cfg.plan)
    b = run_photometric_calibration(cfg, captures=captures)
    m = b.models[cfg.model]
    print(json.dumps({"bundle": str(cfg.bundle), "model": m.kind, "fallback_fraction": m.fallback_fraction()}))


def cmd_detect(cfg, args):
    try:
        out = open(cfg.report, "w") if cfg.report else sys.stdout
    except OSError as e:
        raise BundleIOError(f"cannot write report {cfg.report}: {e}") from e
    try:
        def sink(rep):
            out.write(rep.to_json(timings=cfg.timings) + "\n")

        _, metrics = run_detection(cfg, _frames(cfg, args, not args.no_events), sink=sink)
    except ProcamError:
        raise
    except OSError as e:
        raise BundleIOError(str(e)) from e
    finally:
        if out is not sys.stdout:
            out.close()
    print(json.dumps({"metrics": metrics.to_dict()}), file=sys.stderr)


def cmd_simulate(cfg, args):
    sc = make_scenario(cfg)
    out = export_scenario(sc, args.out, cfg.plan, cfg.calibration_frames)
    print(json.dumps({"exported": str(out), "scenario": sc.name, "frames": sc.n_frames}))


def cmd_bench(cfg, args):
    print(json.dumps(run_bench(cfg), indent=2))


def cmd_sweep(cfg, args):
    bundle = load_bundle(cfg)
    if cfg.frames:
        frames = _frames(cfg, args)
    else:
        frames = make_scenario(cfg).stationary_frames(cfg.sweep_frames)
    triple, bound = sweep_thresholds(cfg, frames, bundle)
    print(json.dumps({"model": cfg.model, "thresholds": list(triple), "pixel_bound": list(bound)}))


COMMANDS = {
    "calibrate-geometry": cmd_calibrate_geometry,
    "calibrate-photometry": cmd_calibrate_photometry,
    "detect": cmd_detect,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "sweep-thresholds": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg, args)
    except ProcamError as e:
        print(f"procam: {e}", file=sys.stderr)
        return e.exit_code if e.exit_code in (2, 3, 4) else 1
    except (ValueError, TypeError) as e:
        print(f"procam: {e}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
