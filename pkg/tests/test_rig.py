import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import apply_matrix, homography_oracle

from procam.errors import InputError
from procam.geometry import grid_corners, map_points
from procam.imaging import GridDims
from procam.rig import Event, PerturbationScript, Rig, RigConfig, StationaryPatch, capture, uniform_buffer

SMALL = dict(buffer_size=(128, 96), camera_size=(80, 60), roi=((6.2, 4.1), (73.5, 5.3), (75.0, 55.2), (4.4, 54.0)))


def _flat_rig(**kw):
    base = dict(SMALL, gamma=(1.0, 1.0, 1.0), gain=(1.0, 1.0, 1.0), offset=(0.0, 0.0, 0.0), noise_sigma=0.0)
    base.update(kw)
    return RigConfig(**base)


def test_flat_response_reproduces_buffer_level():
    cfg = _flat_rig()
    rig = Rig(cfg)
    img = capture(cfg, uniform_buffer(cfg, 140))
    full = rig.coverage == 1.0
    assert full.sum() > 0.8 * full.size * 0.8
    assert np.all(img[full] == 140)
    assert np.all(img[rig.coverage == 0] == cfg.periphery)


def test_event_changes_only_its_footprint():
    cfg = _flat_rig()
    ev = Event("ellipse", (30, 20), ((5, 64, 48),), delta=(-80, -80, -80))
    buf = uniform_buffer(cfg, 200)
    plain = capture(cfg, buf, 5)
    hit = capture(cfg, buf, 5, PerturbationScript((ev,)))
    mask = Rig(cfg).event_mask(ev, 5)
    changed = (plain != hit).any(axis=2)
    assert changed.any()
    assert np.array_equal(changed, mask)
    assert np.all(plain.astype(int)[mask] - hit.astype(int)[mask] == 80)
    # inactive on other frames
    assert np.array_equal(capture(cfg, buf, 6, PerturbationScript((ev,))), capture(cfg, buf, 6))


def test_override_event():
    cfg = _flat_rig()
    ev = Event("rect", (20, 20), ((0, 64, 48), (10, 64, 48)), override=(5, 250, 5))
    img = capture(cfg, uniform_buffer(cfg, 100), 3, PerturbationScript((ev,)))
    m = Rig(cfg).event_mask(ev, 3) & (Rig(cfg).coverage == 1)
    assert np.all(img[m] == (5, 250, 5))


def test_determinism_and_seed_dependence():
    cfg = RigConfig(**SMALL, seed=7)
    buf = np.random.default_rng(0).integers(0, 256, (96, 128, 3), dtype=np.uint8)
    a = capture(cfg, buf, 3)
    assert a.tobytes() == capture(RigConfig(**SMALL, seed=7), buf, 3).tobytes()
    assert not np.array_equal(a, capture(RigConfig(**SMALL, seed=8), buf, 3))
    assert not np.array_equal(a, capture(cfg, buf, 4))


def test_noise_statistics():
    cfg = _flat_rig(noise_sigma=1.5)
    rig = Rig(cfg)
    img = rig.render(uniform_buffer(cfg, 120), 1)
    inside = rig.coverage == 1
    resid = img[inside] - 120.0
    assert abs(resid.mean()) < 0.05 and 1.4 < resid.std() < 1.6


def test_ground_truth_homography_maps_screen_corners():
    cfg = RigConfig(**SMALL)
    bw, bh = cfg.buffer_size
    m = homography_oracle(grid_corners((bw, bh)), cfg.roi)
    for (x, y), (cx, cy) in zip(grid_corners((bw, bh)), cfg.roi):
        assert apply_matrix(m, x, y) == pytest.approx((cx, cy))
    back = np.array(map_points(cfg.homography, [c[0] for c in cfg.roi], [c[1] for c in cfg.roi])).T
    assert back == pytest.approx(np.array(grid_corners((bw, bh))), abs=1e-9)
    grid = GridDims(128, 96, 32, 24)
    gx, gy = map_points(cfg.grid_to_camera(grid), -0.5, -0.5)
    assert (float(gx), float(gy)) == pytest.approx(cfg.roi[0])


def test_vignette_darkens_corners():
    cfg = _flat_rig(vignette=0.4)
    rig = Rig(cfg)
    img = rig.render(uniform_buffer(cfg, 200), 0).mean(axis=2)
    assert img[30, 40] > 195 and img[7, 9] < 140


def test_stationary_patch_gain_and_offset():
    cfg = _flat_rig(patches=(StationaryPatch("rect", (64, 48), (40, 30), gain=(1.5, 1.5, 1.5), offset=(10, 0, 0)),))
    img = Rig(cfg).render(uniform_buffer(cfg, 100), 0)
    assert img[30, 40].tolist() == pytest.approx([160, 150, 150])


def test_verhulst_response():
    p = ((200, 0.03, 128, 10),) * 3
    cfg = _flat_rig(response="verhulst", verhulst=p)
    assert cfg.response_curve(np.full(3, 128.0)) == pytest.approx([110, 110, 110])


def test_gamma_response_formula():
    cfg = RigConfig(**SMALL)
    z = 160.0
    want = np.asarray(cfg.gain) * 255 * (z / 255) ** np.asarray(cfg.gamma) + np.asarray(cfg.offset)
    assert cfg.response_curve(np.full(3, z)) == pytest.approx(want)


@pytest.mark.parametrize(
    "kw",
    [
        {"noise_sigma": -1.0},
        {"roi": ((-3, 4), (70, 5), (75, 55), (4, 54))},
        {"response": "linear"},
        {"response": "verhulst"},
        {"vignette": 1.2},
    ],
)
def test_config_invariants(kw):
    with pytest.raises(InputError):
        RigConfig(**{**SMALL, **kw})


def test_event_invariants():
    with pytest.raises(InputError):
        Event("rect", (5, 5), ((3, 0, 0), (3, 1, 1)), delta=(1, 1, 1))
    with pytest.raises(InputError):
        Event("rect", (5, 5), ((-1, 0, 0),), delta=(1, 1, 1))
    with pytest.raises(InputError):
        Event("rect", (5, 5), ((0, 0, 0),))
    with pytest.raises(InputError):
        Event("hexagon", (5, 5), ((0, 0, 0),), delta=(1, 1, 1))


@given(st.integers(0, 100))
def test_truth_centres_follow_keyframes(frame):
    ev = Event("rect", (8, 8), ((0, 0.0, 10.0), (100, 100.0, 10.0)), delta=(1, 1, 1), label="x")
    grid = GridDims(128, 96, 32, 24)
    (t,) = PerturbationScript((ev,)).truth(frame, grid)
    assert t["center_buffer"] == pytest.approx([frame, 10.0])
    gx, gy = grid.buffer_to_grid(frame, 10.0)
    assert t["center"] == pytest.approx([float(gx), float(gy)], abs=1e-4)
    assert PerturbationScript((ev,)).truth(101, grid) == []
