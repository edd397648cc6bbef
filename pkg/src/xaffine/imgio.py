"""Grayscale image file I/O.

Images are handled in memory as 2-D ``float64`` arrays (rows = y) with
intensities in ``[0, 255]``; quantization to 8 bits happens only here.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

LUMA = (0.299, 0.587, 0.114)


def as_gray(img) -> np.ndarray:
    """Coerce an array to a 2-D float64 grayscale image."""
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = to_gray(arr)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    return arr.astype(np.float64, copy=False)


def to_gray(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb[..., 0] * LUMA[0] + rgb[..., 1] * LUMA[1] + rgb[..., 2] * LUMA[2]


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr", "LA", "PA"):
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
                return to_gray(arr)
            arr = np.asarray(im, dtype=np.float64)
            if im.mode in ("I;16", "I;16B", "I;16L", "I") and arr.max(initial=0) > 255:
                arr = arr * (255.0 / 65535.0)
            return arr
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    """Write an 8-bit grayscale (2-D) or RGB (H, W, 3) image; format from suffix."""
    path = Path(path)
    arr = quantize(img)
    Image.fromarray(arr).save(path)
