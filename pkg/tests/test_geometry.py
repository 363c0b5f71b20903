import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import apply_matrix, homography_oracle

from procam.errors import CoverageError, HorizonPointError, InputError, SingularSystemError
from procam.geometry import (
    CorrespondenceTable,
    HomographyParams,
    build_correspondence_table,
    estimate_homography,
    grid_corners,
    load_homography,
    load_table,
    map_point,
    map_points,
    save_homography,
    save_table,
    table_bytes,
    table_from_bytes,
)

UNIT = [(0, 0), (1, 0), (1, 1), (0, 1)]
PERSPECTIVE = [(0, 0), (1, 0), (2, 2), (0, 1)]


def test_identity():
    h = estimate_homography(list(zip(UNIT, UNIT)))
    assert h.p == pytest.approx((1, 0, 0, 0, 1, 0, 0, 0, 1), abs=1e-12)


def test_translation():
    h = estimate_homography(list(zip(UNIT, [(x + 10, y + 5) for x, y in UNIT])))
    assert h.p == pytest.approx((1, 0, 10, 0, 1, 5, 0, 0, 1), abs=1e-12)
    assert map_point(h, (0, 0)) == pytest.approx((10, 5))


def test_perspective_matches_elimination_oracle():
    h = estimate_homography(list(zip(UNIT, PERSPECTIVE)))
    m = homography_oracle(UNIT, PERSPECTIVE)
    assert h.p == pytest.approx([v for row in m for v in row], abs=1e-10)
    for s, d in zip(UNIT, PERSPECTIVE):
        assert map_point(h, s) == pytest.approx(d, abs=1e-6)
    assert map_point(h, (0.5, 0.5)) == pytest.approx(apply_matrix(m, 0.5, 0.5), abs=1e-10)
    assert h.p[8] == 1.0


def test_identity_map_point():
    assert map_point(HomographyParams.identity(), (12, 34)) == (12, 34)


def test_collinear_sources_rejected():
    with pytest.raises(SingularSystemError):
        estimate_homography(list(zip([(0, 0), (1, 1), (2, 2), (0, 1)], UNIT)))
    with pytest.raises(SingularSystemError):
        estimate_homography(list(zip(UNIT, [(0, 0), (1, 0), (2, 0), (0, 1)])))
    with pytest.raises(InputError):
        estimate_homography(list(zip(UNIT[:3], UNIT[:3])))


def test_horizon_point():
    h = HomographyParams((1, 0, 0, 0, 1, 0, 1, 0, 1))
    with pytest.raises(HorizonPointError):
        map_point(h, (-1, 3))


@st.composite
def convex_quads(draw):
    """Jittered rectangles: always convex, never degenerate."""
    x0, y0 = draw(st.floats(-50, 50)), draw(st.floats(-50, 50))
    w, h = draw(st.floats(20, 400)), draw(st.floats(20, 400))
    j = [draw(st.floats(-0.2, 0.2)) for _ in range(8)]
    base = [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)]
    return [(x + j[2 * i] * w, y + j[2 * i + 1] * h) for i, (x, y) in enumerate(base)]


@given(convex_quads(), convex_quads())
def test_round_trip_property(src, dst):
    h = estimate_homography(list(zip(src, dst)))
    for s, d in zip(src, dst):
        assert map_point(h, s) == pytest.approx(d, abs=1e-6)


@given(convex_quads(), convex_quads())
def test_composition_property(src, dst):
    truth = estimate_homography(list(zip(src, dst)))
    rng = np.random.default_rng(0)
    xs, ys = rng.uniform(0, 1, 1000), rng.uniform(0, 1, 1000)
    # sample inside the source quad's bounding box region, away from the horizon
    sx = min(p[0] for p in src) + xs * (max(p[0] for p in src) - min(p[0] for p in src))
    sy = min(p[1] for p in src) + ys * (max(p[1] for p in src) - min(p[1] for p in src))
    pick = [0, 333, 666, 999]
    tx, ty = map_points(truth, sx, sy)
    try:
        again = estimate_homography([((sx[i], sy[i]), (tx[i], ty[i])) for i in pick])
    except SingularSystemError:
        return  # the four random points happened to be near-collinear
    ax, ay = map_points(again, sx, sy)
    scale = max(1.0, float(np.abs(tx).max()), float(np.abs(ty).max()))
    assert np.max(np.hypot(ax - tx, ay - ty)) <= 1e-6 * scale


def test_table_identity_and_translation():
    t = build_correspondence_table(HomographyParams.identity(), (4, 4), (4, 4))
    Y, X = np.mgrid[0:4, 0:4]
    assert np.array_equal(t.xs, X) and np.array_equal(t.ys, Y)
    h = HomographyParams((1, 0, 10, 0, 1, 5, 0, 0, 1))
    t = build_correspondence_table(h, (4, 4), (20, 20))
    assert np.array_equal(t.xs, X + 10) and np.array_equal(t.ys, Y + 5)


def test_table_perspective_exhaustive():
    dst = [(20.3, 16.8), (300.6, 12.4), (306.1, 228.7), (14.2, 223.5)]
    src = grid_corners((32, 24))
    h = estimate_homography(list(zip(src, dst)))
    t = build_correspondence_table(h, (32, 24), (320, 240))
    m = homography_oracle(src, dst)
    for y in range(24):
        for x in range(32):
            ox, oy = apply_matrix(m, x, y)
            assert (t.xs[y, x], t.ys[y, x]) == (int(np.floor(ox + 0.5)), int(np.floor(oy + 0.5)))


def test_table_coverage_error_names_pixel():
    h = HomographyParams((1, 0, 3, 0, 1, 0, 0, 0, 1))
    with pytest.raises(CoverageError) as e:
        build_correspondence_table(h, (4, 4), (5, 5))
    assert e.value.pixel == (2, 0)


def test_table_is_read_only():
    t = build_correspondence_table(HomographyParams.identity(), (3, 2), (3, 2))
    with pytest.raises(ValueError):
        t.entries[0, 0, 0] = 9


def test_persistence_round_trip(tmp_path):
    h = estimate_homography(list(zip(UNIT, PERSPECTIVE)))
    save_homography(tmp_path / "h.bin", h)
    assert load_homography(tmp_path / "h.bin") == h
    assert (tmp_path / "h.bin").stat().st_size == 72
    t = build_correspondence_table(HomographyParams((2, 0, 1, 0, 2, 1, 0, 0, 1)), (5, 3), (12, 8))
    save_table(tmp_path / "t.bin", t)
    assert load_table(tmp_path / "t.bin") == t
    raw = table_bytes(t)
    assert raw[:6] == b"PCHOM1" and raw[6:14] == (5).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(raw) == 14 + 5 * 3 * 4
    assert int.from_bytes(raw[14:16], "little") == 1 and int.from_bytes(raw[16:18], "little") == 1


def test_corrupt_table():
    with pytest.raises(InputError):
        table_from_bytes(b"XXXXXX" + bytes(8))
    with pytest.raises(InputError):
        table_from_bytes(b"PCHOM1" + (2).to_bytes(4, "little") + (2).to_bytes(4, "little") + bytes(3))
