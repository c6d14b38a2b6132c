"""PGM raster round trips and malformed-input handling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as stn

from autoland.pgm import PgmError, read_pgm, write_pgm


def test_uint8_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(7, 13), dtype=np.uint8)
    path = tmp_path / "a.pgm"
    write_pgm(path, img)
    back = read_pgm(path)
    assert back.dtype == np.uint8
    assert np.array_equal(back, img)


def test_uint16_round_trip_big_endian(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 65536, size=(5, 4), dtype=np.uint16)
    path = tmp_path / "d.pgm"
    write_pgm(path, img)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n4 5\n65535\n")
    # First pixel is stored most-significant byte first.
    header_len = len(b"P5\n4 5\n65535\n")
    assert raw[header_len] == img[0, 0] >> 8
    back = read_pgm(path)
    assert back.dtype == np.uint16
    assert np.array_equal(back, img)


def test_write_is_byte_deterministic(tmp_path):
    img = np.arange(42, dtype=np.uint8).reshape(6, 7)
    write_pgm(tmp_path / "x.pgm", img)
    write_pgm(tmp_path / "y.pgm", img)
    assert (tmp_path / "x.pgm").read_bytes() == (tmp_path / "y.pgm").read_bytes()


def test_comments_in_header(tmp_path):
    payload = bytes(range(6))
    (tmp_path / "c.pgm").write_bytes(b"P5\n# a comment\n3 2\n255\n" + payload)
    img = read_pgm(tmp_path / "c.pgm")
    assert img.shape == (2, 3)
    assert img.ravel().tolist() == list(range(6))


@pytest.mark.parametrize(
    "content",
    [
        b"P2\n2 2\n255\n" + bytes(4),  # ascii magic
        b"P5\n2 2\n255\n" + bytes(3),  # truncated payload
        b"P5\n2 x\n255\n" + bytes(4),  # non-numeric
        b"P5\n2 2\n70000\n" + bytes(8),  # maxval too large
    ],
)
def test_malformed_rejected(tmp_path, content):
    path = tmp_path / "bad.pgm"
    path.write_bytes(content)
    with pytest.raises(PgmError):
        read_pgm(path)


@settings(max_examples=25, deadline=None)
@given(
    w=stn.integers(1, 24),
    h=stn.integers(1, 24),
    seed=stn.integers(0, 2**31 - 1),
)
def test_round_trip_property(tmp_path_factory, w, h, seed):
    img = np.random.default_rng(seed).integers(0, 256, size=(h, w), dtype=np.uint8)
    path = tmp_path_factory.mktemp("pgm") / "p.pgm"
    write_pgm(path, img)
    assert np.array_equal(read_pgm(path), img)
