"""Minimal binary PGM (P5) reading and writing."""

from __future__ import annotations

import os

import numpy as np


def write_pgm(path: str | os.PathLike, image: np.ndarray, maxval: int = 255) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM images must be 2D")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in 1..65535")
    if image.min(initial=0) < 0 or image.max(initial=0) > maxval:
        raise ValueError("pixel values outside [0, maxval]")
    dtype = ">u2" if maxval > 255 else "u1"
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        fh.write(image.astype(dtype).tobytes())


def _tokens(data: bytes, count: int, pos: int) -> tuple[list[int], int]:
    out = []
    while len(out) < count:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        out.append(int(data[start:pos]))
    return out, pos + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise ValueError(f"{path}: not a PGM file")
    (width, height, maxval), pos = _tokens(data, 3, 2)
    if magic == b"P2":
        values, _ = _tokens(data, width * height, pos - 1)
        return np.array(values, dtype=np.int64).reshape(height, width)
    dtype = ">u2" if maxval > 255 else "u1"
    raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return raster.reshape(height, width).astype(np.int64)
