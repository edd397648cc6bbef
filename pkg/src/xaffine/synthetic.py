"""Procedural test imagery for desk-scale experiments."""
from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

__all__ = ["textured_image", "checkerboard", "gaussian_blob"]


def textured_image(size: int = 512, seed: int = 0, n_shapes: int = 900, supersample: int = 4) -> np.ndarray:
    """Graffiti-like clutter of filled shapes at many scales and contrasts.

    Rendered at ``supersample`` times the resolution with Pillow and
    box-downsampled, so edges are anti-aliased. Deterministic in ``seed``.
    """
    rng = np.random.default_rng(seed)
    big = size * supersample
    canvas = Image.new("L", (big, big), int(rng.integers(90, 160)))
    draw = ImageDraw.Draw(canvas)
    # large shapes first, small ones on top
    radii = np.sort(rng.pareto(1.6, n_shapes) * 0.015 + 0.008)[::-1]
    for r in radii:
        r = min(r, 0.25) * big
        cx, cy = rng.uniform(-0.05, 1.05, 2) * big
        fill = int(rng.integers(0, 256))
        kind = rng.integers(0, 4)
        if kind == 0:
            ar = rng.uniform(0.3, 1.0)
            draw.ellipse([cx - r, cy - r * ar, cx + r, cy + r * ar], fill=fill)
        elif kind == 1:
            n = int(rng.integers(3, 7))
            ang = np.sort(rng.uniform(0, 2 * np.pi, n))
            rad = r * rng.uniform(0.4, 1.0, n)
            pts = [(cx + q * np.cos(a), cy + q * np.sin(a)) for q, a in zip(rad, ang)]
            draw.polygon(pts, fill=fill)
        elif kind == 2:
            ar = rng.uniform(0.2, 1.0)
            draw.rectangle([cx - r, cy - r * ar, cx + r, cy + r * ar], fill=fill)
        else:
            a = rng.uniform(0, np.pi)
            dx, dy = r * np.cos(a), r * np.sin(a)
            width = max(1, int(r * rng.uniform(0.05, 0.25)))
            draw.line([cx - dx, cy - dy, cx + dx, cy + dy], fill=fill, width=width)
    small = canvas.resize((size, size), Image.Resampling.BOX)
    return np.asarray(small, dtype=np.float64)


def checkerboard(size: int = 256, square: int = 16, low: float = 0.0, high: float = 255.0) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size]
    return np.where(((x // square) + (y // square)) % 2 == 0, high, low).astype(float)


def gaussian_blob(size: int = 256, center=(100.0, 100.0), sigma: float = 4.0,
                  background: float = 40.0, peak: float = 220.0) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size].astype(float)
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
    return background + (peak - background) * np.exp(-r2 / (2 * sigma * sigma))
