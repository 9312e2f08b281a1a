"""Lossless image dumps (binary PPM) of generator samples."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def to_uint8(images: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to [0, 255]; values outside are clipped."""
    return np.clip(np.rint((np.asarray(images, np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def make_grid(images: np.ndarray, n_cols: int, pad: int = 1) -> np.ndarray:
    images = to_uint8(images)
    n, h, w, c = images.shape
    n_rows = -(-n // n_cols)
    grid = np.zeros((n_rows * (h + pad) + pad, n_cols * (w + pad) + pad, c), np.uint8)
    for k in range(n):
        r, col = divmod(k, n_cols)
        y, x = pad + r * (h + pad), pad + col * (w + pad)
        grid[y:y + h, x:x + w] = images[k]
    return grid


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, np.uint8)
    h, w, c = rgb.shape
    if c != 3:
        raise ValueError(f"PPM needs 3 channels, got {c}")
    with open(Path(path), "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path} is not a binary PPM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PPM is supported")
    data = blob[len(blob) - w * h * 3:]
    return np.frombuffer(data, np.uint8).reshape(h, w, 3)
