"""Image resampling under 3x3 transforms: nearest-neighbour and Lanczos.

Coordinate conventions
----------------------
The matrix handed to :func:`warp_nearest` / :func:`warp_lanczos` acts on
*area* coordinates, where pixel ``(i, j)`` covers ``[i, i+1) x [j, j+1)``.
This keeps resizes aligned (a 2x stretch doubles the image exactly).
Everything returned to callers (``WarpResult.forward``, keypoints,
homographies) uses *centre* coordinates, where integer values sit on pixel
centres. The two differ by a half-pixel shift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import invert, translation
from .imgio import as_gray

__all__ = [
    "WarpResult",
    "lanczos_kernel",
    "sample_lanczos",
    "lanczos_sample",
    "warp_nearest",
    "warp_lanczos",
    "antialias_tilt",
    "antialias_sigma",
]

ANTIALIAS_C = 0.8
_CHUNK = 1 << 18
_HALF = translation(0.5, 0.5)
_HALF_INV = translation(-0.5, -0.5)


@dataclass
class WarpResult:
    image: np.ndarray
    # translation added so the warped content starts at (0, 0)
    offset: tuple[float, float]
    # source -> output map in centre coordinates, offset included
    forward: np.ndarray
    # False where the output is outside the source content or within the
    # border band around it
    mask: np.ndarray

    @property
    def shape(self):
        return self.image.shape


def lanczos_kernel(x, a: int = 4):
    """Lanczos window ``sinc(x) sinc(x/a)`` on ``(-a, a)``, zero elsewhere.

    Accepts scalars or arrays. Non-zero integers return exactly 0.
    """
    if a < 1:
        raise ValueError("kernel width a must be >= 1")
    xa = np.asarray(x, dtype=float)
    out = np.sinc(xa) * np.sinc(xa / a)
    out = np.where(np.abs(xa) < a, out, 0.0)
    out = np.where((xa == np.round(xa)) & (xa != 0.0), 0.0, out)
    if np.ndim(x) == 0:
        return float(out)
    return out


def _tap_weights(frac: np.ndarray, a: int) -> np.ndarray:
    """Normalized weights for taps ``-a+1 .. a`` given fractional offsets."""
    taps = np.arange(-a + 1, a + 1, dtype=float)
    w = lanczos_kernel(taps[:, None] - frac[None, :], a)
    return w / w.sum(axis=0, keepdims=True)


def lanczos_sample(img: np.ndarray, xs, ys, a: int = 4) -> np.ndarray:
    """Vectorised Lanczos interpolation at centre coordinates ``(xs, ys)``.

    Lookups outside the image are clamped to the nearest edge pixel and the
    kernel weights are renormalised to sum to one along each axis.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    h, w = img.shape
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    shape = np.broadcast(xs, ys).shape
    xs = np.broadcast_to(xs, shape).ravel()
    ys = np.broadcast_to(ys, shape).ravel()
    flat = img.ravel()
    out = np.empty(xs.size)
    for start in range(0, xs.size, _CHUNK):
        sl = slice(start, start + _CHUNK)
        out[sl] = _lanczos_chunk(flat, h, w, xs[sl], ys[sl], a)
    return out.reshape(shape)


def _lanczos_chunk(flat, h, w, xs, ys, a):
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    wx = _tap_weights(xs - x0, a)
    wy = _tap_weights(ys - y0, a)
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    taps = range(-a + 1, a + 1)
    cols = [np.clip(x0 + i, 0, w - 1) for i in taps]
    acc = np.zeros(xs.size)
    for jj, j in enumerate(taps):
        rowbase = np.clip(y0 + j, 0, h - 1) * w
        row = np.zeros(xs.size)
        for ii in range(len(cols)):
            row += wx[ii] * flat[rowbase + cols[ii]]
        acc += wy[jj] * row
    return acc


def sample_lanczos(img: np.ndarray, x: float, y: float, a: int = 4) -> float:
    """Interpolated intensity at one centre coordinate."""
    return float(lanczos_sample(img, np.array([x]), np.array([y]), a)[0])


def _snap(v: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) < 1e-9 else v


def _apply(m, x, y):
    u = m[0, 0] * x + m[0, 1] * y + m[0, 2]
    v = m[1, 0] * x + m[1, 1] * y + m[1, 2]
    if m[2, 0] != 0.0 or m[2, 1] != 0.0 or m[2, 2] != 1.0:
        wgt = m[2, 0] * x + m[2, 1] * y + m[2, 2]
        u = u / wgt
        v = v / wgt
    return u, v


def _frame(m: np.ndarray, h: int, w: int):
    """Bounding box of the transformed image area and the offset that frames it."""
    cx = np.array([0.0, w, 0.0, w])
    cy = np.array([0.0, 0.0, h, h])
    if m[2, 0] != 0.0 or m[2, 1] != 0.0:
        wgt = m[2, 0] * cx + m[2, 1] * cy + m[2, 2]
        if np.any(wgt <= 0):
            raise ValueError("transform sends part of the image to infinity")
    u, v = _apply(m, cx, cy)
    xmin, xmax = _snap(u.min()), _snap(u.max())
    ymin, ymax = _snap(v.min()), _snap(v.max())
    ox = -math.floor(xmin) + 0.0
    oy = -math.floor(ymin) + 0.0
    out_w = max(1, int(math.ceil(xmax + ox)))
    out_h = max(1, int(math.ceil(ymax + oy)))
    return ox, oy, out_w, out_h


def _check_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    a2 = m[:2, :2]
    if abs(np.linalg.det(a2)) < 1e-10 * max(1.0, np.abs(a2).max()) ** 2:
        raise ValueError("degenerate transform (near-singular linear part)")
    return m


def _border_mask(valid: np.ndarray, band: int) -> np.ndarray:
    if band <= 0 or valid.all():
        return valid
    return ndimage.binary_erosion(valid, iterations=band, border_value=1)


def _warp(img, m, sampler, band):
    img = as_gray(img)
    m = _check_matrix(m)
    h, w = img.shape
    ox, oy, out_w, out_h = _frame(m, h, w)
    framed = translation(ox, oy) @ m
    back = invert(framed)
    out = np.zeros((out_h, out_w))
    valid = np.zeros((out_h, out_w), dtype=bool)
    rows_per_chunk = max(1, _CHUNK // out_w)
    xs = np.arange(out_w, dtype=float) + 0.5
    for r0 in range(0, out_h, rows_per_chunk):
        r1 = min(out_h, r0 + rows_per_chunk)
        gx, gy = np.meshgrid(xs, np.arange(r0, r1, dtype=float) + 0.5)
        u, v = _apply(back, gx, gy)
        vals, ok = sampler(img, u, v)
        out[r0:r1] = np.where(ok, vals, 0.0)
        valid[r0:r1] = ok
    forward = _HALF_INV @ framed @ _HALF
    return WarpResult(out, (ox, oy), forward, _border_mask(valid, band))


def _nearest_sampler(img, u, v):
    h, w = img.shape
    ix = np.floor(u)
    iy = np.floor(v)
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    ixc = np.clip(ix, 0, w - 1).astype(np.int64)
    iyc = np.clip(iy, 0, h - 1).astype(np.int64)
    return img[iyc, ixc], ok


def warp_nearest(img: np.ndarray, m: np.ndarray, border_band: int = 4) -> WarpResult:
    """Nearest-neighbour warp framed to the bounding box of the warped image.

    Output pixels whose pre-image falls outside the source are 0.
    """
    return _warp(img, m, _nearest_sampler, border_band)


def warp_lanczos(img: np.ndarray, m: np.ndarray, a: int = 4, border_band: int | None = None) -> WarpResult:
    """Lanczos warp (window ``2a x 2a``), same framing as :func:`warp_nearest`.

    Intensities are clamped to ``[0, 255]``.
    """
    if a < 1:
        raise ValueError("kernel width a must be >= 1")

    def sampler(src, u, v):
        h, w = src.shape
        ok = (u >= 0) & (u <= w) & (v >= 0) & (v <= h)
        vals = lanczos_sample(src, u - 0.5, v - 0.5, a)
        return np.clip(vals, 0.0, 255.0), ok

    return _warp(img, m, sampler, a if border_band is None else border_band)


def antialias_sigma(t: float) -> float:
    if not t >= 1.0:
        raise ValueError(f"tilt must be >= 1, got {t}")
    return ANTIALIAS_C * math.sqrt(t * t - 1.0)


def antialias_tilt(img: np.ndarray, t: float, phi: float) -> np.ndarray:
    """Gaussian blur along the direction a tilt of ``t`` at longitude ``phi`` compresses.

    The simulation maps the source direction ``(cos phi, -sin phi)`` onto the
    x axis before compressing it, so that is the blur direction. Returns a
    copy of the input for ``t == 1``.
    """
    img = as_gray(img)
    sigma = antialias_sigma(t)
    if sigma == 0.0:
        return img.copy()
    c, s = math.cos(phi), -math.sin(phi)
    if abs(s) < 1e-12:
        return ndimage.gaussian_filter1d(img, sigma, axis=1, mode="reflect")
    if abs(c) < 1e-12:
        return ndimage.gaussian_filter1d(img, sigma, axis=0, mode="reflect")
    return _directional_blur_fft(img, sigma, c, s)


def _directional_blur_fft(img, sigma, dx, dy):
    pad = int(math.ceil(4.0 * sigma)) + 1
    padded = np.pad(img, pad, mode="symmetric")
    ph, pw = padded.shape
    fy = np.fft.fftfreq(ph)[:, None]
    fx = np.fft.rfftfreq(pw)[None, :]
    proj = 2.0 * math.pi * (fx * dx + fy * dy)
    gain = np.exp(-0.5 * sigma * sigma * proj * proj)
    out = np.fft.irfft2(np.fft.rfft2(padded) * gain, s=(ph, pw))
    return out[pad:pad + img.shape[0], pad:pad + img.shape[1]]
