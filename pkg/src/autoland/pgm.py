"""Binary PGM (P5) raster I/O.

8-bit rasters carry rendered marker frames, hazard masks, and label maps;
16-bit rasters (maxval 65535, big-endian) carry depth images in
millimeters. Writers emit a minimal, byte-stable header so reruns of any
seeded command produce identical files.
"""

from __future__ import annotations

import numpy as np


class PgmError(ValueError):
    """Malformed PGM header or truncated payload."""


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D uint8 or uint16 array as binary PGM (P5).

    16-bit data is stored big-endian per the netpbm convention.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected 2-D image, got shape {image.shape}")
    if image.dtype == np.uint8:
        maxval = 255
        payload = image.tobytes()
    elif image.dtype == np.uint16:
        maxval = 65535
        payload = image.astype(">u2").tobytes()
    else:
        raise ValueError(f"unsupported dtype {image.dtype}; use uint8 or uint16")
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) file to uint8 (maxval <= 255) or uint16."""
    with open(path, "rb") as f:
        data = f.read()

    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed between them.
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise PgmError(f"{path}: truncated header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise PgmError(f"{path}: unterminated comment")
            pos = nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    pos += 1  # single whitespace byte after maxval

    if tokens[0] != b"P5":
        raise PgmError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PgmError(f"{path}: non-numeric header field") from exc
    if width <= 0 or height <= 0 or not (0 < maxval < 65536):
        raise PgmError(f"{path}: invalid dimensions or maxval")

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise PgmError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    image = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return image.astype(np.uint16) if maxval > 255 else image.copy()
