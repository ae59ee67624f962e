import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equiwarp.flow import (FLO_MAGIC, FloFormatError, FlowField, compose_flow, coverage_map,
                           make_synthetic_flow, read_flo, sample_bilinear, warp_frame, write_flo)


def test_flowfield_rejects_bad_input():
    with pytest.raises(ValueError):
        FlowField(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        FlowField(np.array([[np.nan]]), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        FlowField(np.zeros((0, 2)), np.zeros((0, 2)))


def test_translate_examples():
    f = make_synthetic_flow("translate", (0, 0), 8, 8)
    assert f.max_abs() == 0
    f = make_synthetic_flow("translate", (1, 0), 4, 4)
    assert (f.u == 1).all() and (f.v == 0).all()


def test_synthetic_flow_errors():
    with pytest.raises(ValueError):
        make_synthetic_flow("zoom", 0.0, 4, 4)
    with pytest.raises(ValueError):
        make_synthetic_flow("zoom", -1.0, 4, 4)
    with pytest.raises(ValueError):
        make_synthetic_flow("translate", (math.inf, 0), 4, 4)
    with pytest.raises(ValueError):
        make_synthetic_flow("shear", 1.0, 4, 4)


def test_rotate_quarter_turn_matches_coordinate_oracle():
    n = 8
    f = make_synthetic_flow("rotate", math.pi / 2, n, n)
    c = (n - 1) / 2
    for y in range(n):
        for x in range(n):
            # analytic rotation of the pixel center about the image center
            tx = c - (y - c)
            ty = c + (x - c)
            assert x + f.u[y, x] == tx and y + f.v[y, x] == ty
    # a quarter turn permutes the pixel grid
    ends = {(x + f.u[y, x], y + f.v[y, x]) for y in range(n) for x in range(n)}
    assert ends == {(float(x), float(y)) for y in range(n) for x in range(n)}


def test_compose_examples():
    f = make_synthetic_flow("rotate", 0.3, 16, 16)
    z = FlowField.zeros(16, 16)
    assert compose_flow(z, f).equals(f)
    assert np.allclose(compose_flow(f, z).u, f.u, atol=1e-6)
    c = compose_flow(make_synthetic_flow("translate", (1, 0), 8, 8),
                     make_synthetic_flow("translate", (2, 0), 8, 8))
    assert (c.u == 3).all() and (c.v == 0).all()


def test_compose_rotation_with_inverse():
    th = 0.2
    c = compose_flow(make_synthetic_flow("rotate", th, 32, 32),
                     make_synthetic_flow("rotate", -th, 32, 32))
    ys, xs = np.mgrid[0:32, 0:32]
    disc = np.hypot(xs - 15.5, ys - 15.5) < 14.5  # rotated points stay on-image
    assert max(np.abs(c.u[disc]).max(), np.abs(c.v[disc]).max()) <= 1e-4


def test_compose_dimension_mismatch():
    with pytest.raises(ValueError):
        compose_flow(FlowField.zeros(4, 4), FlowField.zeros(5, 4))


def test_warp_frame_examples():
    rng = np.random.default_rng(0)
    img = rng.standard_normal((6, 7))
    assert np.array_equal(warp_frame(img, FlowField.zeros(7, 6)), img)
    shift = make_synthetic_flow("translate", (1, 0), 7, 6)
    assert np.array_equal(warp_frame(np.full((6, 7), 3.5), shift), np.full((6, 7), 3.5))
    ramp = np.add.outer(10.0 * np.arange(6), np.arange(7))
    out = warp_frame(ramp, shift)
    assert np.array_equal(out[:, 1:], ramp[:, :-1])


def test_warp_frame_errors():
    with pytest.raises(ValueError):
        warp_frame(np.zeros((3, 3)), FlowField.zeros(4, 3))
    bad = np.zeros((3, 3))
    bad[1, 1] = np.inf
    with pytest.raises(ValueError):
        warp_frame(bad, FlowField.zeros(3, 3))


@settings(max_examples=30, deadline=None)
@given(dx=st.integers(-3, 3), dy=st.integers(-3, 3), seed=st.integers(0, 2 ** 16))
def test_integer_translation_warp_is_index_shift(dx, dy, seed):
    h, w = 7, 9
    img = np.random.default_rng(seed).standard_normal((h, w))
    out = warp_frame(img, make_synthetic_flow("translate", (dx, dy), w, h))
    for y in range(h):
        for x in range(w):
            sx, sy = x - dx, y - dy
            if 0 <= sx < w and 0 <= sy < h:
                assert out[y, x] == img[sy, sx]


def test_sample_bilinear_extrapolates_affine_fields():
    ys, xs = np.mgrid[0:5, 0:6].astype(float)
    field = 2.0 * xs - 0.5 * ys + 1.0
    x = np.array([-1.3, 6.7, 2.5])
    y = np.array([-0.4, 5.2, 1.5])
    got = sample_bilinear(field, x, y, edge="extrapolate")
    assert np.allclose(got, 2.0 * x - 0.5 * y + 1.0)


def test_flo_hand_built_bytes():
    raw = struct.pack("<fii", FLO_MAGIC, 1, 1) + struct.pack("<ff", 1.5, -2.0)
    assert len(raw) == 20
    f = read_flo(raw)
    assert f.shape == (1, 1) and f.u[0, 0] == 1.5 and f.v[0, 0] == -2.0
    assert raw[:4] == b"PIEH"


def test_flo_write_layout():
    z = write_flo(FlowField.zeros(1, 1))
    assert len(z) == 20 and z[12:20] == bytes(8)
    f = FlowField(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[-1.0, -2.0], [-3.0, -4.0]]))
    data = struct.unpack("<8f", write_flo(f)[12:])
    assert data == (1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0, -4.0)


def test_flo_errors():
    good = write_flo(FlowField.zeros(2, 2))
    with pytest.raises(FloFormatError, match="bad magic"):
        read_flo(struct.pack("<fii", 0.0, 2, 2) + good[12:])
    with pytest.raises(FloFormatError, match="truncated"):
        read_flo(good[:-1])
    with pytest.raises(FloFormatError, match="truncated"):
        read_flo(good[:8])
    for w, h in [(0, 2), (2, -1), (2 ** 16 + 1, 1)]:
        with pytest.raises(FloFormatError, match="dimensions"):
            read_flo(struct.pack("<fii", FLO_MAGIC, w, h))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.data())
def test_flo_round_trip_bytes(w, h, data):
    vals = data.draw(st.lists(st.floats(-1e6, 1e6, allow_nan=False, width=32),
                              min_size=2 * w * h, max_size=2 * w * h))
    raw = struct.pack("<fii", FLO_MAGIC, w, h) + struct.pack(f"<{2 * w * h}f", *vals)
    assert write_flo(read_flo(raw)) == raw
    f = read_flo(raw)
    assert read_flo(write_flo(f)).equals(f)


def test_coverage_examples():
    ident = coverage_map(FlowField.zeros(5, 4), subdiv=2)
    assert (ident.count == 4).all()
    cm = coverage_map(make_synthetic_flow("translate", (1, 0), 4, 4), subdiv=1)
    assert (cm.count[:, 0] == 0).all() and (cm.count[:, 1:] == 1).all()
    assert cm.transported == cm.count.sum() == 12


def test_coverage_zoom_conserves_and_opens_holes():
    f = make_synthetic_flow("zoom", 2.0, 8, 8)
    for s in (1, 2, 3):
        cm = coverage_map(f, s)
        assert cm.count.sum() == cm.transported <= s * s * 64
    assert coverage_map(f, 1).holes().any()
    # at s=2 every sub-sample lands in its own pixel: no holes
    assert (coverage_map(f, 2).count == 1).all()
