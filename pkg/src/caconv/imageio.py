"""PNG / PPM / PGM reading and writing through Pillow."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def _open(path) -> Image.Image:
    try:
        return Image.open(path)
    except FileNotFoundError:
        raise DataError(f"image not found: {path}") from None
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None


def read_image(path, size: int | None = None) -> np.ndarray:
    """RGB image as ``H x W x 3`` floats in [0, 1], optionally resized to ``size x size``."""
    with _open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    """Single-channel integer class-ID mask."""
    with _open(path) as im:
        if im.mode not in ("L", "P", "I", "I;16"):
            im = im.convert("L")
        return np.asarray(im).astype(np.int64)


def write_gray(path, arr: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path)


def write_rgb(path, arr: np.ndarray) -> None:
    """Write ``H x W x 3`` floats in [0, 1] or uint8."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)
