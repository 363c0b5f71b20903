import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from helpers import PLAN, random_model
from oracles import estimate_oracle, logistic
from scipy.optimize import least_squares

from procam.errors import CalibrationQualityError, InputError
from procam.geometry import build_correspondence_table
from procam.imaging import GridDims
from procam.photometry import (
    FLAG_DECREASING,
    FLAG_FALLBACK,
    CalibrationModel,
    SamplePlan,
    VerhulstParams,
    calibrate,
    estimate_image,
    fit_verhulst,
    fit_verhulst_batch,
    load_model,
    save_model,
    transfer_eval,
    verhulst_eval,
)
from procam.scenarios import scenario

ZS = np.arange(256.0)
REF = VerhulstParams(200, 0.03, 128, 10)


def _samples(p, plan=PLAN.intensities):
    return [(z, logistic(p, z)) for z in plan]


def test_eval_examples():
    assert verhulst_eval(REF, 128) == pytest.approx(110.0)
    assert verhulst_eval(VerhulstParams(0, 0.5, 3, 42), ZS) == pytest.approx(np.full(256, 42.0))
    v = VerhulstParams(80, 0.02, 60, 5)
    assert verhulst_eval(v, 60) == pytest.approx(45.0)


@given(st.floats(1, 255), st.floats(0.001, 0.2), st.floats(-50, 300), st.floats(-40, 40))
def test_monotone_and_bounded(a, alpha, b, k):
    y = verhulst_eval(VerhulstParams(a, alpha, b, k), ZS)
    assert np.all(np.diff(y) >= 0)
    assert np.all(y >= k) and np.all(y <= a + k)


def test_fit_recovers_reference_curve():
    fit = fit_verhulst(_samples((200, 0.03, 128, 10)))
    assert not fit.fallback
    assert np.max(np.abs(fit(ZS) - verhulst_eval(REF, ZS))) <= 0.5


def test_constant_samples_fall_back_flat():
    fit = fit_verhulst([(z, 77.0) for z in PLAN.intensities])
    assert fit.fallback
    assert np.all(fit(ZS) == 77.0)


def test_decreasing_samples():
    gen = (150, -0.04, 120, 20)
    fit = fit_verhulst(_samples(gen))
    assert fit.decreasing and not fit.fallback
    assert fit.params[1] < 0 or fit.params[0] < 0
    for z, y in _samples(gen):
        assert abs(fit(z) - y) <= 0.25


def test_non_finite_samples_rejected():
    with pytest.raises(InputError):
        fit_verhulst([(32, 1.0), (96, np.nan), (160, 3.0), (224, 4.0)])
    with pytest.raises(InputError):
        fit_verhulst([(32, 1.0), (32, 2.0), (160, 3.0), (224, 4.0)])


def test_infeasible_samples_fall_back_to_interpolation():
    # equal first and last differences with a small middle one cannot be a logistic
    ys = [10.0, 60.0, 70.0, 120.0]
    fit = fit_verhulst(list(zip(PLAN.intensities, ys)))
    assert fit.fallback
    assert fit(96) == 60.0 and fit(128) == pytest.approx(65.0) and fit(0) == 10.0 and fit(255) == 120.0


def test_fit_idempotence(rng):
    for _ in range(20):
        p = (rng.uniform(50, 255), rng.uniform(0.01, 0.1), rng.uniform(64, 192), rng.uniform(0, 40))
        first = fit_verhulst(_samples(p))
        again = fit_verhulst([(z, first(z)) for z in PLAN.intensities])
        assert np.max(np.abs(again(ZS) - first(ZS))) <= 0.5


def test_fit_agrees_with_scipy_least_squares(rng):
    """Noisy but feasible samples: whenever an independent trust-region solver
    started at the generator reaches the residual tolerance, so do we."""
    z = PLAN.z
    n_agree = 0
    for _ in range(60):
        p = np.array([rng.uniform(80, 220), rng.uniform(0.015, 0.06), rng.uniform(90, 170), rng.uniform(0, 30)])
        y = np.array([logistic(p, v) for v in z]) + rng.normal(0, 0.3, 4)
        ref = least_squares(lambda q: np.array([logistic(q, v) for v in z]) - y, p, method="lm", xtol=1e-12)
        ours = fit_verhulst(list(zip(z, y)))
        if np.max(np.abs(ref.fun)) <= 0.2:
            assert not ours.fallback
            assert max(abs(ours(v) - yy) for v, yy in zip(z, y)) <= 0.25
            n_agree += 1
    assert n_agree > 30


def test_batch_shapes_and_flags():
    y = np.array([[logistic((200, 0.03, 128, 10), v) for v in PLAN.z], [5.0] * 4])
    params, flags = fit_verhulst_batch(PLAN.z, y)
    assert params.shape == (2, 4) and flags.tolist() == [0, FLAG_FALLBACK]
    with pytest.raises(InputError):
        fit_verhulst_batch(PLAN.z, y[:, :3])


def test_sample_plan_invariants():
    assert SamplePlan().intensities == (32, 96, 160, 224)
    with pytest.raises(InputError):
        SamplePlan((10, 10, 20, 30))
    with pytest.raises(InputError):
        SamplePlan((10, 20, 30, 300))


# --- estimation ----------------------------------------------------------------


def test_estimate_matches_brute_force_oracle(rng):
    grid = GridDims(40, 24, 8, 8)
    for _ in range(3):
        model = random_model(rng, grid)
        buf = rng.integers(0, 256, (24, 40, 3), dtype=np.uint8)
        got = estimate_image(buf, model)
        want = estimate_oracle(buf, model.params.tolist(), model.flags.tolist(), PLAN.intensities, 8, 8)
        assert np.array_equal(got, want)


def test_estimate_uniform_region_is_rounded_transfer():
    grid = GridDims(16, 16, 4, 4)
    p = np.broadcast_to(np.array([200, 0.03, 128, 10.0]), (4, 4, 3, 4))
    model = CalibrationModel("local", grid, PLAN, p, np.zeros((4, 4, 3), np.uint8))
    for z in (0, 37, 128, 255):
        est = estimate_image(np.full((16, 16, 3), z, np.uint8), model)
        want = int(np.floor(verhulst_eval(REF, z) + 0.5))
        assert np.all(est == want)


def test_estimate_flat_model():
    grid = GridDims(12, 9, 4, 3)
    p = np.broadcast_to(np.array([0.0, 0.01, 0.0, 60.0]), (3, 4)).copy()
    model = CalibrationModel("global", grid, PLAN, p, np.zeros(3, np.uint8))
    est = estimate_image(np.random.default_rng(0).integers(0, 256, (9, 12, 3), dtype=np.uint8), model)
    assert np.all(est == 60)


def test_estimate_dims_mismatch():
    model = random_model(np.random.default_rng(1), GridDims(8, 8, 4, 4))
    with pytest.raises(InputError):
        estimate_image(np.zeros((9, 8, 3), np.uint8), model)


@given(st.integers(0, 2**32 - 1))
def test_averaging_bound(seed):
    rng = np.random.default_rng(seed)
    grid = GridDims(10, 7, 3, 2)
    model = random_model(rng, grid)
    buf = rng.integers(0, 256, (7, 10, 3), dtype=np.uint8)
    est = estimate_image(buf, model)
    for ry in range(2):
        for rx in range(3):
            ys = range(grid.row_starts[ry], grid.row_starts[ry + 1])
            xs = range(grid.col_starts[rx], grid.col_starts[rx + 1])
            for c in range(3):
                vals = transfer_eval(model.params[ry, rx, c], model.flags[ry, rx, c], [buf[y, x, c] for y in ys for x in xs], PLAN.z)
                lo, hi = np.clip(vals.min(), 0, 255), np.clip(vals.max(), 0, 255)
                # rounding to 8 bits may move the mean by at most one level
                assert lo - 1 <= est[ry, rx, c] <= hi + 1


# --- calibration on the simulated rig -----------------------------------------------


def _rig_calibration(name="vignette-only", **kw):
    sc = scenario(name, buffer_size=(256, 192), camera_size=(160, 120), grid_size=(64, 48), **kw)
    table = build_correspondence_table(sc.rig.grid_to_camera(sc.grid), sc.grid.grid_size, sc.rig.camera_size)
    caps = sc.sample_captures(PLAN.intensities)
    return sc, table, caps


def test_uniform_rig_local_matches_global():
    sc, table, caps = _rig_calibration(vignette=0.0, noise_sigma=0.0)
    loc = calibrate("local", caps, table, sc.grid)
    glo = calibrate("global", caps, table, sc.grid)
    zs = np.arange(0, 256, 5.0)
    diff = np.abs(loc.curve(zs) - glo.curve(zs)[None, None])
    # rounding of single camera pixels leaves up to half a level per sample
    assert np.max(diff[..., :, :]) <= 1.0


def test_vignette_makes_local_curves_vary():
    sc, table, caps = _rig_calibration()
    loc = calibrate("local", caps, table, sc.grid)
    glo = calibrate("global", caps, table, sc.grid)
    at160 = loc.curve([160.0])[..., 0]
    centre = at160[24, 32]
    corner = at160[1, 1]
    assert np.all(centre - corner > 10)  # noise sigma is 1.5
    assert glo.params.shape == (3, 4) and glo.n_param_sets == 3


def test_stains_show_in_local_estimate():
    sc, table, caps = _rig_calibration("stains-9")
    loc = calibrate("local", caps, table, sc.grid)
    est = estimate_image(sc.buffer(0), loc).astype(int)
    # centre of the middle stain against a point between stains at the same radius
    cx, cy = sc.grid.buffer_to_grid(512 / 4, 384 / 4)
    ox, oy = sc.grid.buffer_to_grid(512 / 4, 277 / 4)
    inside = est[int(round(float(cy))), int(round(float(cx)))]
    outside = est[int(round(float(oy))), int(round(float(ox)))]
    assert np.all(inside - outside > 8)


def test_calibrate_input_errors():
    sc, table, caps = _rig_calibration()
    with pytest.raises(InputError):
        calibrate("local", caps[:3], table, sc.grid)
    with pytest.raises(InputError):
        calibrate("local", caps[:3] + [None], table, sc.grid)
    with pytest.raises(InputError):
        calibrate("sideways", caps, table, sc.grid)


def test_pervasive_failures_raise(rng):
    sc, table, caps = _rig_calibration()
    junk = [rng.integers(0, 256, c.shape, dtype=np.uint8) for c in caps]
    with pytest.raises(CalibrationQualityError):
        calibrate("local", junk, table, sc.grid)


def test_frame_stacks_are_averaged():
    sc, table, _ = _rig_calibration()
    stacks = sc.sample_captures(PLAN.intensities, n_average=3)
    a = calibrate("local", stacks, table, sc.grid)
    obs = np.stack([s.mean(axis=0)[table.ys, table.xs] for s in stacks], axis=-1)
    params, flags = fit_verhulst_batch(PLAN.z, obs.reshape(-1, 4))
    assert np.array_equal(a.params.reshape(-1, 4), params)
    assert np.array_equal(a.flags.ravel(), flags)


def test_model_round_trip(tmp_path, rng):
    model = random_model(rng, GridDims(20, 12, 5, 4))
    save_model(tmp_path, model, stem="m")
    assert load_model(tmp_path, stem="m") == model
    assert (tmp_path / "m.bin").stat().st_size == 5 * 4 * 12 * 8
    glo = CalibrationModel("global", model.grid, PLAN, model.params[0, 0], model.flags[0, 0])
    save_model(tmp_path, glo, stem="g")
    assert load_model(tmp_path, stem="g") == glo


def test_model_shape_invariants():
    g = GridDims(8, 8, 2, 2)
    with pytest.raises(InputError):
        CalibrationModel("local", g, PLAN, np.zeros((3, 4)), np.zeros(3, np.uint8))
    with pytest.raises(InputError):
        CalibrationModel("global", g, PLAN, np.full((3, 4), np.inf), np.zeros(3, np.uint8))


def test_flag_bits_are_distinct():
    assert FLAG_FALLBACK & FLAG_DECREASING == 0
