"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only."""
from __future__ import annotations

import os

import numpy as np

from semedge.errors import DataError


def _header(magic: bytes, width: int, height: int) -> bytes:
    return b"%s\n%d %d\n255\n" % (magic, width, height)


def write_pgm(path: str | os.PathLike, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise DataError(f"PGM needs a 2-D array, got {arr.shape}")
    data = np.ascontiguousarray(arr, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(_header(b"P5", data.shape[1], data.shape[0]))
        f.write(data.tobytes())


def write_ppm(path: str | os.PathLike, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"PPM needs an (H, W, 3) array, got {arr.shape}")
    data = np.ascontiguousarray(arr, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(_header(b"P6", data.shape[1], data.shape[0]))
        f.write(data.tobytes())


def _read_tokens(buf: bytes, count: int, pos: int) -> tuple[list[int], int]:
    tokens = []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError("truncated netpbm header")
        try:
            tokens.append(int(buf[start:pos]))
        except ValueError:
            raise DataError(f"bad netpbm header token {buf[start:pos]!r}") from None
    return tokens, pos + 1  # single whitespace byte before raster


def _read(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != magic:
        raise DataError(f"{path}: expected {magic.decode()} file, found {buf[:2]!r}")
    (width, height, maxval), pos = _read_tokens(buf, 3, 2)
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported (got {maxval})")
    size = width * height * channels
    raster = buf[pos:pos + size]
    if len(raster) != size:
        raise DataError(f"{path}: raster has {len(raster)} bytes, expected {size}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return arr.reshape(shape).copy()


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    return _read(path, b"P5", 1)


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    return _read(path, b"P6", 3)
