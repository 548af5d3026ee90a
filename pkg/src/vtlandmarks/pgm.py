"""Binary PGM (P5) read/write, 8- and 16-bit."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PGMError(ValueError):
    pass


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise PGMError(f"PGM needs a 2-D image, got shape {image.shape}")
    if image.dtype == np.uint8:
        maxval, payload = 255, image.tobytes()
    elif image.dtype == np.uint16:
        maxval, payload = 65535, image.astype(">u2").tobytes()
    else:
        raise PGMError(f"PGM supports uint8 or uint16, got {image.dtype}")
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + payload)


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PGMError(f"{path}: truncated PGM header")
        fields.append(buf[start:pos])
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P5":
        raise PGMError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    w, h, maxval = (int(f) for f in fields[1:])
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    if len(buf) - pos < n:
        raise PGMError(f"{path}: raster truncated ({len(buf) - pos} of {n} bytes)")
    arr = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return arr.astype(np.uint8 if maxval < 256 else np.uint16)
