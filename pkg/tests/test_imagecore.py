import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from greedypixel.imagecore import (
    ImageFormatError,
    Perturbation,
    apply_perturbation,
    as_image,
    decode_pnm,
    encode_pnm,
    read_image,
    write_image,
)

EPS = 4 / 255


def test_apply_within_bounds():
    x = np.full((3, 2, 2), 0.5)
    out = apply_perturbation(x, Perturbation(EPS, np.full((3, 2, 2), EPS)))
    assert np.array_equal(out, np.full((3, 2, 2), 0.5 + EPS))


def test_apply_clamps_at_one():
    x = np.ones((3, 2, 2))
    out = apply_perturbation(x, Perturbation(EPS, np.full((3, 2, 2), EPS)))
    assert np.array_equal(out, x)


def test_apply_zero_delta_is_identity(rng):
    x = rng.random((3, 5, 4))
    assert np.array_equal(apply_perturbation(x, Perturbation.zeros(x.shape, EPS)), x)


def test_apply_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        apply_perturbation(np.zeros((3, 2, 2)), np.zeros((3, 2, 3)))


def test_perturbation_invariants():
    d = np.zeros((3, 3, 3))
    d[1, 0, 2] = -EPS
    d[0, 2, 1] = EPS
    p = Perturbation(EPS, d)
    assert p.touched == {(0, 2), (2, 1)}
    with pytest.raises(ValueError):
        Perturbation(EPS, d * 2)
    with pytest.raises(ValueError):
        Perturbation(0.0, d)


def test_as_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        as_image(np.full((1, 2, 2), 1.5))
    with pytest.raises(ValueError):
        as_image(np.zeros((2, 2)))


shapes = st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5))


@settings(max_examples=50, deadline=None)
@given(data=st.data(), shape=shapes)
def test_clamp_totality(data, shape):
    x = data.draw(arrays(np.float64, shape, elements=st.floats(0, 1)))
    delta = data.draw(arrays(np.float64, shape, elements=st.floats(-5, 5)))
    out = apply_perturbation(x, delta)
    assert out.min() >= 0.0 and out.max() <= 1.0


@settings(max_examples=50, deadline=None)
@given(data=st.data(), shape=shapes, eps=st.floats(1e-3, 0.2))
def test_linf_bound_without_clamping(data, shape, eps):
    x = data.draw(arrays(np.float64, shape, elements=st.floats(0.25, 0.75)))
    delta = data.draw(arrays(np.float64, shape, elements=st.floats(-eps, eps)))
    out = apply_perturbation(x, Perturbation(eps, delta))
    assert np.abs(out - x).max() <= eps + 1e-15


# PNM ---------------------------------------------------------------------


def test_byte_scale():
    x = decode_pnm(b"P5\n2 1\n255\n\xff\x00")
    assert x.shape == (1, 1, 2)
    assert x[0, 0, 0] == 1.0 and x[0, 0, 1] == 0.0


def test_p6_round_trip_byte_identical(tmp_path):
    raw = b"P6\n2 2\n255\n" + bytes(range(0, 240, 20))
    path = tmp_path / "a.ppm"
    path.write_bytes(raw)
    x = read_image(path)
    assert x.shape == (3, 2, 2)
    # first pixel is (0, 20, 40)
    assert np.allclose(x[:, 0, 0], np.array([0, 20, 40]) / 255)
    write_image(x, tmp_path / "b.ppm")
    assert (tmp_path / "b.ppm").read_bytes() == raw
    write_image(read_image(tmp_path / "b.ppm"), tmp_path / "c.ppm")
    assert (tmp_path / "c.ppm").read_bytes() == raw


def test_header_with_comments():
    x = decode_pnm(b"P5 # gray\n# size next\n1 1\n255\n\x80")
    assert x[0, 0, 0] == 128 / 255


@pytest.mark.parametrize(
    "raw, msg",
    [
        (b"P3\n1 1\n255\n1 2 3", "magic"),
        (b"P6\n1 x\n255\n\x00\x00\x00", "malformed"),
        (b"P6\n2 2\n255\n\x00\x00", "truncated"),
        (b"P5\n1 1\n65535\n\x00\x00", "maxval"),
        (b"P5\n1", "truncated"),
    ],
)
def test_malformed_files(raw, msg):
    with pytest.raises(ImageFormatError, match=msg):
        decode_pnm(raw)


def test_encode_rejects_two_channels():
    with pytest.raises(ValueError):
        encode_pnm(np.zeros((2, 1, 1)))


@settings(max_examples=40, deadline=None)
@given(data=st.data(), c=st.sampled_from([1, 3]), h=st.integers(1, 6), w=st.integers(1, 6))
def test_quantized_round_trip_exact(data, c, h, w):
    b = data.draw(arrays(np.uint8, (c, h, w)))
    x = b.astype(np.float64) / 255.0
    y = decode_pnm(encode_pnm(x))
    assert np.array_equal(x, y)
