"""
Binary portable graymap (P5, 8-bit) reading and writing through Pillow.
Grids are float arrays on the [0, 1] scale.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, ImageFormatError

MAGIC = b"P5"
MAX_VALUE = 255


def quantize(grid: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(grid, dtype=np.float64) * MAX_VALUE), 0, MAX_VALUE).astype(np.uint8)


def write_pgm(path, grid: np.ndarray) -> Path:
    """Write a 2-D [0, 1] grid as an 8-bit P5 graymap"""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ImageFormatError(f"graymap needs a 2-D grid, got shape {grid.shape}")
    pixels = grid if grid.dtype == np.uint8 else quantize(grid)
    path = Path(path)
    try:
        Image.fromarray(pixels).save(path, format="PPM")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e
    return path


def read_pgm(path) -> np.ndarray:
    """Read a P5 graymap into a float32 grid scaled by 1/255"""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            magic = f.read(2)
    except FileNotFoundError as e:
        raise DataError(f"image not found: {path}") from e
    if magic != MAGIC:
        raise ImageFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")

    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise ImageFormatError(f"{path}: expected 8-bit graymap, got mode {im.mode}")
            offset = im.tile[0][2]
            expected = offset + im.width * im.height
            size = path.stat().st_size
            if size != expected:
                raise ImageFormatError(f"{path}: dimension/payload mismatch, {size} bytes for a "
                                       f"{im.width}x{im.height} graymap (expected {expected})")
            im.load()
            pixels = np.asarray(im, dtype=np.uint8)
    except ImageFormatError:
        raise
    except (OSError, SyntaxError, ValueError) as e:
        raise ImageFormatError(f"{path}: dimension/payload mismatch ({e})") from e
    return pixels.astype(np.float32) / MAX_VALUE
