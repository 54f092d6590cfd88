import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rbivision.imageio import (ImageFormatError, encode_pgm, parse_pgm, parse_pgm_maxval,
                               read_image, write_image)


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_pgm_round_trip(img):
    data = encode_pgm(img)
    assert np.array_equal(parse_pgm(data), img)
    assert encode_pgm(parse_pgm(data)) == data


def test_canonical_header():
    assert encode_pgm(np.zeros((2, 3), np.uint8)) == b"P5\n3 2\n255\n" + bytes(6)


def test_file_round_trip_is_byte_identical(tmp_path, fixtures):
    for name in ("scene_alt.pgm", "astronaut256.pgm"):
        src = (fixtures / name).read_bytes()
        write_image(tmp_path / name, read_image(fixtures / name))
        assert (tmp_path / name).read_bytes() == src


def test_header_comments_and_maxval():
    data = b"P5 # made by hand\n2 # width\n1\n# max\n15\n\x03\x0f"
    img, maxval = parse_pgm_maxval(data)
    assert img.tolist() == [[3, 15]] and maxval == 15


@pytest.mark.parametrize("data", [b"P2\n1 1\n255\n0", b"P5\n1 1\n", b"P5\n2 2\n255\n\x00",
                                  b"P5\n1 1\n300\n\x00", b"P5\n1 1\n15\n\x20", b"P5\nx 1\n255\n\x00",
                                  b"P5\n1 1\n255"])
def test_bad_pgm(data):
    with pytest.raises(ImageFormatError):
        parse_pgm(data)


def test_png_via_pillow(tmp_path):
    img = np.arange(48, dtype=np.uint8).reshape(6, 8)
    write_image(tmp_path / "a.png", img)
    assert np.array_equal(read_image(tmp_path / "a.png"), img)
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "junk.png")


def test_writer_rejects_bad_input():
    with pytest.raises(ValueError):
        encode_pgm(np.zeros((2, 2), np.int32))
    with pytest.raises(ValueError):
        encode_pgm(np.full((2, 2), 9, np.uint8), maxval=5)
