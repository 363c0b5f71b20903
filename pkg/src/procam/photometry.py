"""Colour-transfer calibration and estimated-image synthesis.

The transfer function from projected intensity z to observed intensity is
the four-parameter logistic

    F(z) = a / (1 + exp(-alpha (z - b))) + k

fitted per channel either once for the whole screen (``global``) or once per
estimated-image region (``local``). Regions whose logistic fit does not
converge fall back to piecewise-linear interpolation through the four
calibration samples and are flagged.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (
    BundleIOError,
    CalibrationQualityError,
    InputError,
)
from .geometry import CorrespondenceTable
from .imaging import GridDims, as_image, check_buffer

log = logging.getLogger(__name__)

FLAG_FALLBACK = _kernels.FLAG_FALLBACK
FLAG_DECREASING = 2

DEFAULT_SAMPLE_PLAN = (32, 96, 160, 224)
FIT_RESIDUAL_TOL = 0.25
LM_STEP_TOL = 1e-6
LM_MAX_ITER = 200
MAX_FAILED_FRACTION = 0.10
MODEL_FORMAT_VERSION = 1

# restart grid for fits the default initialisation cannot bring home
_RESTART_ALPHAS = (0.02, 0.08)
_RESTART_MIDPOINTS = 3
_RESTART_MAX_ITER = 60


@dataclass(frozen=True)
class VerhulstParams:
    a: float
    alpha: float
    b: float
    k: float

    def __post_init__(self):
        if not all(np.isfinite((self.a, self.alpha, self.b, self.k))):
            raise InputError(f"non-finite logistic parameters {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.alpha, self.b, self.k], dtype=np.float64)


def verhulst_eval(v: VerhulstParams, z):
    """Unclamped logistic value(s) at intensity ``z``."""
    z = np.asarray(z, dtype=np.float64)
    with np.errstate(over="ignore"):
        out = v.a / (1.0 + np.exp(-v.alpha * (z - v.b))) + v.k
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SamplePlan:
    intensities: tuple = DEFAULT_SAMPLE_PLAN

    def __post_init__(self):
        z = tuple(int(v) for v in self.intensities)
        if len(z) != 4:
            raise InputError("a sample plan has exactly four intensities")
        if any(b <= a for a, b in zip(z, z[1:])) or z[0] < 0 or z[-1] > 255:
            raise InputError(f"sample intensities must be strictly increasing in [0, 255]: {z}")
        object.__setattr__(self, "intensities", z)

    @property
    def z(self) -> np.ndarray:
        return np.array(self.intensities, dtype=np.float64)


# --- evaluation shared by fits, models and LUTs -----------------------------


def _logistic(p, z):
    a, al, b, k = (p[..., i, None] for i in range(4))
    with np.errstate(over="ignore"):
        return a / (1.0 + np.exp(-al * (z - b))) + k


def _piecewise(p, z, plan_z):
    idx = np.clip(np.searchsorted(plan_z, z, side="right") - 1, 0, 2)
    z0 = plan_z[idx]
    z1 = plan_z[idx + 1]
    t = np.clip((z - z0) / (z1 - z0), 0.0, 1.0)
    y0 = np.take_along_axis(p, np.broadcast_to(idx, p.shape[:-1] + idx.shape[-1:]), -1)
    y1 = np.take_along_axis(p, np.broadcast_to(idx + 1, p.shape[:-1] + idx.shape[-1:]), -1)
    return y0 + t * (y1 - y0)


def transfer_eval(params, flags, z, plan_z=None):
    """Evaluate stacked transfer functions.

    ``params`` is ``(..., 4)``, ``flags`` is ``params.shape[:-1]``, ``z`` is a
    1-D array of intensities; the result is ``(..., len(z))``.
    """
    params = np.asarray(params, dtype=np.float64)
    flags = np.asarray(flags)
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    out = _logistic(params, z)
    fb = (flags & FLAG_FALLBACK).astype(bool)
    if fb.any():
        plan_z = np.asarray(DEFAULT_SAMPLE_PLAN if plan_z is None else plan_z, dtype=np.float64)
        out[fb] = _piecewise(params[fb], z[None, :], plan_z)
    return out


def transfer_pointwise(params, flags, z, plan_z):
    """Evaluate row i of ``params (N, 4)`` at ``z[i]``; returns (N,)."""
    p = np.asarray(params, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    with np.errstate(over="ignore"):
        out = p[:, 0] / (1.0 + np.exp(-p[:, 1] * (z - p[:, 2]))) + p[:, 3]
    fb = (np.asarray(flags) & FLAG_FALLBACK).astype(bool)
    if fb.any():
        plan_z = np.asarray(plan_z, dtype=np.float64)
        zz = z[fb]
        idx = np.clip(np.searchsorted(plan_z, zz, side="right") - 1, 0, 2)
        t = np.clip((zz - plan_z[idx]) / (plan_z[idx + 1] - plan_z[idx]), 0.0, 1.0)
        pf = p[fb]
        rr = np.arange(pf.shape[0])
        out[fb] = pf[rr, idx] + t * (pf[rr, idx + 1] - pf[rr, idx])
    return out


# --- fitting ----------------------------------------------------------------


def _jacobian(p, z):
    a, al, b = p[:, 0:1], p[:, 1:2], p[:, 2:3]
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-al * (z - b)))
    ds = s * (1.0 - s)
    return np.stack([s, a * ds * (z - b), -a * ds * al, np.ones_like(s)], axis=-1)


def _levenberg_marquardt(z, y, p0, max_iter=LM_MAX_ITER, tol=LM_STEP_TOL):
    """Batched Levenberg-Marquardt on independent 4-residual problems.

    Marquardt scaling (damping by diag(J^T J)) keeps the very different
    parameter magnitudes (alpha ~ 1e-2, b ~ 1e2) well conditioned. Returns
    (params, converged) where converged means the last accepted step moved
    every parameter by less than ``tol`` relative, or the residual vanished.
    """
    p = p0.copy()
    n = p.shape[0]
    r = _logistic(p, z) - y
    cost = np.einsum("ij,ij->i", r, r)
    lam = np.full(n, 1e-3)
    active = np.isfinite(cost)
    converged = np.zeros(n, dtype=bool)
    eye = np.eye(4)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        J = _jacobian(p[idx], z)
        JT = J.transpose(0, 2, 1)
        JTJ = JT @ J
        g = np.einsum("nij,nj->ni", JT, r[idx])
        D = np.maximum(np.diagonal(JTJ, axis1=1, axis2=2), 1e-12)
        A = JTJ + lam[idx, None, None] * eye * D[:, None, :]
        step = np.zeros_like(g)
        solvable = np.abs(np.linalg.det(A)) > 0
        if solvable.any():
            step[solvable] = np.linalg.solve(A[solvable], -g[solvable][..., None])[..., 0]
        pn = p[idx] + step
        rn = _logistic(pn, z) - y[idx]
        cn = np.einsum("ij,ij->i", rn, rn)
        better = np.isfinite(cn) & (cn < cost[idx])
        acc = idx[better]
        p[acc] = pn[better]
        r[acc] = rn[better]
        cost[acc] = cn[better]
        lam[acc] /= 3.0
        lam[idx[~better]] *= 4.0

        tiny = (np.abs(step) <= tol * (np.abs(p[idx]) + tol)).all(axis=1)
        done_ok = (better & tiny) | (cost[idx] < 1e-18)
        converged[idx[done_ok]] = True
        stalled = lam[idx] > 1e12
        active[idx[done_ok | stalled]] = False
    return p, converged


def _initial_guess(z, y):
    lo = y.min(axis=1)
    span = y.max(axis=1) - lo
    slope = (y[:, 2] - y[:, 1]) / (z[2] - z[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(span > 0, 4.0 * slope / span, 0.0)
    # a decreasing curve is a logistic with negative alpha and the same span
    k0 = lo
    return np.stack([span, alpha, np.full_like(lo, 0.5 * (z[0] + z[-1])), k0], axis=-1)


def _linear_amp_offset(z, y, alpha, b):
    """Least-squares (a, k) for fixed (alpha, b): y ~ a*s(z) + k."""
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-alpha[:, None] * (z - b[:, None])))
    m = z.size
    ss, sss = s.sum(1), (s * s).sum(1)
    sy, ssy = y.sum(1), (s * y).sum(1)
    det = m * sss - ss * ss
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(np.abs(det) > 1e-12, (m * ssy - ss * sy) / det, np.nan)
        k = np.where(np.abs(det) > 1e-12, (sss * sy - ss * ssy) / det, np.nan)
    return a, k


def _exact_four_point(z, y):
    """Logistic through four equally spaced samples, where one exists.

    With ``e_i = y_i - k`` the reciprocals ``1/e_i`` form a constant plus a
    geometric sequence, which pins ``k`` to a root of a quadratic. Rows with
    no admissible root get NaN. Unequal spacing returns all NaN.
    """
    n = y.shape[0]
    out = np.full((n, 4), np.nan)
    h = z[1] - z[0]
    if not np.allclose(np.diff(z), h):
        return out
    d0, d1, d2 = y[:, 1] - y[:, 0], y[:, 2] - y[:, 1], y[:, 3] - y[:, 2]
    c2 = d1 * d1 - d0 * d2
    c1 = -d1 * d1 * (y[:, 0] + y[:, 3]) + d0 * d2 * (y[:, 1] + y[:, 2])
    c0 = d1 * d1 * y[:, 0] * y[:, 3] - d0 * d2 * y[:, 1] * y[:, 2]
    with np.errstate(all="ignore"):
        disc = np.sqrt(c1 * c1 - 4 * c2 * c0)
        quad = np.abs(c2) > 1e-9 * (np.abs(c1) + 1)
        roots = [
            np.where(quad, (-c1 + disc) / (2 * c2), -c0 / c1),
            np.where(quad, (-c1 - disc) / (2 * c2), np.nan),
        ]
        for k in roots:
            e = y - k[:, None]
            u = 1.0 / e
            same_sign = (np.sign(e) == np.sign(e[:, :1])).all(axis=1) & (e != 0).all(axis=1)
            r = (u[:, 2] - u[:, 1]) / (u[:, 1] - u[:, 0])
            B = (u[:, 1] - u[:, 0]) / (r - 1.0)
            A = u[:, 0] - B
            q = B / A
            alpha = -np.log(r) / h
            b = z[0] + np.log(q) / alpha
            cand = np.stack([1.0 / A, alpha, b, k], axis=-1)
            good = same_sign & (r > 0) & (np.abs(r - 1) > 1e-12) & (q > 0) & np.isfinite(cand).all(axis=1)
            good &= np.isnan(out[:, 0])
            out[good] = cand[good]
    return out


def fit_verhulst_batch(z, y):
    """Fit many independent 4-sample transfer curves.

    ``z`` is the shared sample plan (4,), ``y`` the observations (N, 4).
    Returns ``(params (N, 4), flags (N,) uint8)``. Fallback rows store the
    observations themselves for piecewise-linear evaluation.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != (4,) or y.ndim != 2 or y.shape[1] != 4:
        raise InputError(f"expected 4 sample intensities and (N, 4) observations, got {z.shape}, {y.shape}")
    if np.any(np.diff(z) <= 0):
        raise InputError("sample intensities must be strictly increasing")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
        raise InputError("non-finite calibration samples")

    n = y.shape[0]
    params = np.zeros((n, 4))
    flags = np.zeros(n, dtype=np.uint8)
    ok = np.zeros(n, dtype=bool)

    flat = np.ptp(y, axis=1) == 0
    todo = np.flatnonzero(~flat)
    if todo.size:
        p, conv = _levenberg_marquardt(z, y[todo], _initial_guess(z, y[todo]))
        good = conv & (np.abs(_logistic(p, z) - y[todo]).max(axis=1) <= FIT_RESIDUAL_TOL)
        params[todo[good]] = p[good]
        ok[todo[good]] = True

        # second chance: start from the exact four-point solution
        rest = np.flatnonzero(~ok & ~flat)
        p0 = _exact_four_point(z, y[rest])
        has = np.isfinite(p0).all(axis=1)
        if has.any():
            idx = rest[has]
            p, conv = _levenberg_marquardt(z, y[idx], p0[has])
            good = conv & (np.abs(_logistic(p, z) - y[idx]).max(axis=1) <= FIT_RESIDUAL_TOL)
            params[idx[good]] = p[good]
            ok[idx[good]] = True

        mids = np.linspace(z[0], z[-1], _RESTART_MIDPOINTS)
        for alpha0 in _RESTART_ALPHAS:
            for b0 in mids:
                rest = np.flatnonzero(~ok & ~flat)
                if rest.size == 0:
                    break
                # try both slope signs; decreasing data needs alpha < 0
                sign = np.where(y[rest, -1] >= y[rest, 0], 1.0, -1.0)
                al = alpha0 * sign
                bb = np.full(rest.size, b0)
                a, k = _linear_amp_offset(z, y[rest], al, bb)
                p0 = np.stack([a, al, bb, k], axis=-1)
                finite = np.all(np.isfinite(p0), axis=1)
                if not finite.any():
                    continue
                rest, p0 = rest[finite], p0[finite]
                p, conv = _levenberg_marquardt(z, y[rest], p0, max_iter=_RESTART_MAX_ITER)
                good = conv & (np.abs(_logistic(p, z) - y[rest]).max(axis=1) <= FIT_RESIDUAL_TOL)
                params[rest[good]] = p[good]
                ok[rest[good]] = True

    fallback = ~ok
    params[fallback] = y[fallback]
    flags[fallback] |= FLAG_FALLBACK
    decreasing = ok & (params[:, 0] * params[:, 1] < 0)
    flags[decreasing] |= FLAG_DECREASING
    return params, flags


@dataclass(frozen=True)
class TransferFit:
    """Outcome of fitting one channel of one region."""

    params: tuple
    flags: int
    plan: tuple = DEFAULT_SAMPLE_PLAN

    @property
    def fallback(self) -> bool:
        return bool(self.flags & FLAG_FALLBACK)

    @property
    def decreasing(self) -> bool:
        return bool(self.flags & FLAG_DECREASING)

    @property
    def verhulst(self) -> VerhulstParams | None:
        return None if self.fallback else VerhulstParams(*self.params)

    def __call__(self, z):
        out = transfer_eval(np.array([self.params]), np.array([self.flags], np.uint8), np.atleast_1d(z), self.plan)[0]
        return float(out[0]) if np.ndim(z) == 0 else out


def fit_verhulst(samples: Sequence) -> TransferFit:
    """Fit one logistic through four ``(projected z, observed)`` pairs."""
    samples = list(samples)
    if len(samples) != 4:
        raise InputError(f"exactly four samples required, got {len(samples)}")
    z = np.array([s[0] for s in samples], dtype=np.float64)
    y = np.array([[s[1] for s in samples]], dtype=np.float64)
    params, flags = fit_verhulst_batch(z, y)
    return TransferFit(tuple(float(v) for v in params[0]), int(flags[0]), tuple(float(v) for v in z))


# --- calibration model --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CalibrationModel:
    """Fitted transfer functions.

    ``params`` is ``(grid_height, grid_width, 3, 4)`` for a local model and
    ``(3, 4)`` for a global one; ``flags`` drops the last axis.
    """

    kind: str
    grid: GridDims
    plan: SamplePlan
    params: np.ndarray
    flags: np.ndarray

    def __post_init__(self):
        if self.kind not in ("local", "global"):
            raise InputError(f"unknown model kind {self.kind!r}")
        p = np.array(self.params, dtype=np.float64)
        f = np.array(self.flags, dtype=np.uint8)
        want = (self.grid.grid_height, self.grid.grid_width, 3) if self.kind == "local" else (3,)
        if p.shape != want + (4,) or f.shape != want:
            raise InputError(f"{self.kind} model expects params {want + (4,)}, flags {want}; got {p.shape}, {f.shape}")
        if not np.all(np.isfinite(p)):
            raise InputError("model parameters must be finite")
        p.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "flags", f)

    @property
    def n_param_sets(self) -> int:
        return self.flags.size

    def regional(self):
        """(params, flags) broadcast to one entry per region."""
        if self.kind == "local":
            return self.params, self.flags
        gh, gw = self.grid.grid_height, self.grid.grid_width
        return (
            np.broadcast_to(self.params, (gh, gw, 3, 4)),
            np.broadcast_to(self.flags, (gh, gw, 3)),
        )

    def curve(self, z, region=None, channel=None):
        """Transfer values at ``z``: for one region/channel, or every one."""
        p, f = self.regional()
        if region is not None:
            p, f = p[region[1], region[0]], f[region[1], region[0]]
        if channel is not None:
            p, f = p[..., channel, :], f[..., channel]
        return transfer_eval(p, f, z, self.plan.z)

    def fallback_fraction(self) -> float:
        return float(np.mean(self.flags & FLAG_FALLBACK > 0))

    def __eq__(self, other):
        return (
            isinstance(other, CalibrationModel)
            and self.kind == other.kind
            and self.grid == other.grid
            and self.plan == other.plan
            and np.array_equal(self.params, other.params)
            and np.array_equal(self.flags, other.flags)
        )


def _stack_capture(cap, name):
    a = np.asarray(cap)
    if a.ndim == 4:  # several frames of the same sample: average them
        frames = [as_image(f, name) for f in a]
        return np.mean(np.stack(frames).astype(np.float64), axis=0)
    return as_image(a, name).astype(np.float64)


def calibrate(kind, captures, table: CorrespondenceTable, grid: GridDims, plan: SamplePlan | None = None) -> CalibrationModel:
    """Fit a local or global model from one camera capture per sample intensity.

    Each entry of ``captures`` may be a single image or a stack of frames
    ``(n, H, W, 3)`` to be averaged.
    """
    plan = plan or SamplePlan()
    if kind not in ("local", "global"):
        raise InputError(f"unknown model kind {kind!r}")
    if captures is None or len(captures) != 4 or any(c is None for c in captures):
        raise InputError("photometric calibration needs one capture per sample intensity (4)")
    if (table.grid_width, table.grid_height) != grid.grid_size:
        raise InputError("correspondence table does not match the grid dimensions")
    caps = [_stack_capture(c, f"capture {i}") for i, c in enumerate(captures)]
    h, w = caps[0].shape[:2]
    if any(c.shape != caps[0].shape for c in caps):
        raise InputError("calibration captures differ in size")
    table.check_camera(w, h)

    # observed value at each region's camera pixel: (gh, gw, 3, 4 samples)
    obs = np.stack([c[table.ys, table.xs] for c in caps], axis=-1)
    z = plan.z
    if kind == "global":
        y = obs.reshape(-1, 3, 4).mean(axis=0)
        params, flags = fit_verhulst_batch(z, y)
        fails = int(np.count_nonzero(flags & FLAG_FALLBACK))
        if fails:
            log.warning("global fit fell back to piecewise-linear on %d channel(s)", fails)
        return CalibrationModel("global", grid, plan, params, flags)

    gh, gw = grid.grid_height, grid.grid_width
    params, flags = fit_verhulst_batch(z, obs.reshape(-1, 4))
    params = params.reshape(gh, gw, 3, 4)
    flags = flags.reshape(gh, gw, 3)
    # each (region, channel) curve is its own fit and is counted separately
    failed = (flags & FLAG_FALLBACK) != 0
    frac = float(failed.mean())
    if frac > MAX_FAILED_FRACTION:
        raise CalibrationQualityError(
            f"{frac:.1%} of region curves failed the logistic fit (limit {MAX_FAILED_FRACTION:.0%})"
        )
    if frac:
        log.info("%d of %d region curves use the piecewise-linear fallback", int(failed.sum()), failed.size)
    return CalibrationModel("local", grid, plan, params, flags)


# --- estimation -----------------------------------------------------------------


def estimate_image(buffer, model: CalibrationModel) -> np.ndarray:
    """Estimated camera view of ``buffer``.

    For each region and channel every buffer pixel is passed through the
    region's transfer function and quantised to 8 bits, and the region mean is
    rounded half away from zero.
    """
    buf = check_buffer(buffer, model.grid)
    params, flags = model.regional()
    g = model.grid
    out = np.empty((g.grid_height, g.grid_width, 3), dtype=np.uint8)
    _kernels.estimate_direct(
        np.ascontiguousarray(buf),
        np.ascontiguousarray(params),
        np.ascontiguousarray(flags),
        model.plan.z,
        g.col_starts,
        g.row_starts,
        out,
    )
    return out


# --- persistence ------------------------------------------------------------------


def save_model(directory, model: CalibrationModel, stem="model") -> None:
    d = Path(directory)
    manifest = {
        "format": "procam-model",
        "version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "grid": {
            "buffer_width": model.grid.buffer_width,
            "buffer_height": model.grid.buffer_height,
            "grid_width": model.grid.grid_width,
            "grid_height": model.grid.grid_height,
        },
        "sample_plan": list(model.plan.intensities),
        "params_file": f"{stem}.bin",
        "flags_file": f"{stem}_flags.bin",
        "param_order": ["a", "alpha", "b", "k"],
        "layout": "region-major (row-major regions), then channel r,g,b, then 4 params",
    }
    try:
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{stem}.json").write_text(json.dumps(manifest, indent=2) + "\n")
        (d / f"{stem}.bin").write_bytes(model.params.astype("<f8").tobytes())
        (d / f"{stem}_flags.bin").write_bytes(model.flags.astype(np.uint8).tobytes())
    except OSError as e:
        raise BundleIOError(f"cannot write model to {d}: {e}") from e


def load_model(directory, stem="model") -> CalibrationModel:
    d = Path(directory)
    try:
        manifest = json.loads((d / f"{stem}.json").read_text())
        raw = (d / manifest["params_file"]).read_bytes()
        raw_flags = (d / manifest["flags_file"]).read_bytes()
    except OSError as e:
        raise BundleIOError(f"cannot read model from {d}: {e}") from e
    except (KeyError, json.JSONDecodeError) as e:
        raise InputError(f"malformed model manifest in {d}: {e}") from e
    if manifest.get("version") != MODEL_FORMAT_VERSION:
        raise InputError(f"unsupported model format version {manifest.get('version')}")
    grid = GridDims(**manifest["grid"])
    kind = manifest["kind"]
    shape = (grid.grid_height, grid.grid_width, 3) if kind == "local" else (3,)
    n = int(np.prod(shape))
    if len(raw) != n * 4 * 8 or len(raw_flags) != n:
        raise InputError(f"model arrays in {d} do not match the {kind} manifest")
    params = np.frombuffer(raw, dtype="<f8").reshape(shape + (4,))
    flags = np.frombuffer(raw_flags, dtype=np.uint8).reshape(shape)
    return CalibrationModel(kind, grid, SamplePlan(tuple(manifest["sample_plan"])), params, flags)
