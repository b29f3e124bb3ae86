"""Binary greymap (PGM, P5) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {img.shape}")
    img = np.clip(img, 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens plus the offset after them."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), offset = _tokens(data, 4)
    except IndexError as exc:
        raise ValueError(f"{path}: truncated PGM header") from exc
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    raster = np.frombuffer(data, dtype=dtype, count=w * h, offset=offset)
    return raster.reshape(h, w).astype(np.uint8 if maxval < 256 else np.uint16)


def heatmap_to_pgm(path, heatmap: np.ndarray) -> None:
    """Write one heatmap, mapping [0, max] linearly onto 0..255."""
    hm = np.maximum(np.asarray(heatmap, dtype=np.float64), 0.0)
    peak = hm.max()
    scaled = hm / peak * 255.0 if peak > 0 else hm
    write_pgm(path, np.rint(scaled))
