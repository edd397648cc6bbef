"""Oriented segment-test corners with 256-bit binary descriptors.

This is the cheap feature engine used to score the simulated views during
the coarse parameter search: FAST-9 corners on an 8-level pyramid (ratio
1.2), ranked by Harris response, intensity-centroid orientation, and
rotated pairwise-comparison descriptors matched by Hamming distance.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy import ndimage

from .features import Keypoint, MatchPair
from .imgio import as_gray

__all__ = [
    "OrbParams",
    "detect_oriented_corners",
    "describe_binary",
    "detect_and_describe_binary",
    "match_hamming",
    "hamming_distance",
    "load_pattern",
    "PATTERN_FILE",
]

PATTERN_FILE = "brief_pattern_v1.txt"
N_BITS = 256
N_BYTES = N_BITS // 8
PATCH_RADIUS = 15
# keypoints closer than this to a level border cannot be described
EDGE = 20

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy)
_CIRCLE = np.array(
    [(0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
     (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3)]
)


@dataclass(frozen=True)
class OrbParams:
    n_levels: int = 8
    scale_factor: float = 1.2
    fast_threshold: float = 20.0
    # used when the first pass yields fewer than max_points / 4 corners
    fast_threshold_low: float = 7.0
    harris_k: float = 0.04
    harris_block: int = 7


_PATTERN = None


def load_pattern() -> np.ndarray:
    """The ``(256, 4)`` integer table of point-pair offsets ``x1 y1 x2 y2``."""
    global _PATTERN
    if _PATTERN is None:
        text = resources.files("xaffine").joinpath("data").joinpath(PATTERN_FILE).read_text()
        rows = [line.split() for line in text.splitlines() if line.strip() and not line.startswith("#")]
        pattern = np.array(rows, dtype=np.int64)
        if pattern.shape != (N_BITS, 4):
            raise RuntimeError(f"corrupt descriptor pattern table: shape {pattern.shape}")
        _PATTERN = pattern
    return _PATTERN


def pattern_checksum() -> str:
    data = resources.files("xaffine").joinpath("data").joinpath(PATTERN_FILE).read_bytes()
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------- pyramid

def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Area-aligned bilinear resize, edge-clamped."""
    h, w = img.shape
    out = ndimage.zoom(img, (out_h / h, out_w / w), order=1, grid_mode=True, mode="nearest")
    if out.shape != (out_h, out_w):
        raise RuntimeError(f"resize produced {out.shape}, expected {(out_h, out_w)}")
    return out


def _resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = mask.shape
    xs = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.int64), w - 1)
    ys = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.int64), h - 1)
    return mask[np.ix_(ys, xs)]


@dataclass
class _Level:
    index: int
    image: np.ndarray
    mask: np.ndarray | None
    # base-image pixels per level pixel along x and y
    sx: float
    sy: float
    smooth: np.ndarray | None = None

    def to_base(self, lx, ly):
        return (lx + 0.5) * self.sx - 0.5, (ly + 0.5) * self.sy - 0.5

    def from_base(self, x, y):
        return (x + 0.5) / self.sx - 0.5, (y + 0.5) / self.sy - 0.5

    def smoothed(self):
        if self.smooth is None:
            self.smooth = ndimage.gaussian_filter(self.image, 2.0, truncate=1.5, mode="reflect")
        return self.smooth


def _build_pyramid(img, mask, params: OrbParams):
    # single precision is ample for 8-bit content and halves memory traffic
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape
    levels = []
    for lev in range(params.n_levels):
        s = params.scale_factor**lev
        lh, lw = int(round(h / s)), int(round(w / s))
        if min(lh, lw) < 2 * EDGE + 1:
            break
        if lev == 0:
            limg, lmask = img, mask
        else:
            limg = _resize_bilinear(img, lh, lw)
            lmask = None if mask is None else _resize_mask(mask, lh, lw)
        levels.append(_Level(lev, limg, lmask, w / lw, h / lh))
    return levels


# ---------------------------------------------------------------- detection

def _fast_candidates(img, threshold, border):
    """Pixels passing the 9-of-16 contiguous segment test, as (ys, xs)."""
    h, w = img.shape
    b = max(border, 3)
    if h - 2 * b <= 0 or w - 2 * b <= 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    c = img[b:h - b, b:w - b]

    def ring(k):
        dx, dy = _CIRCLE[k]
        return img[b + dy:h - b + dy, b + dx:w - b + dx]

    hi = c + threshold
    lo = c - threshold
    n_bright = np.zeros(c.shape, np.int8)
    n_dark = np.zeros(c.shape, np.int8)
    for k in (0, 4, 8, 12):
        r = ring(k)
        n_bright += r > hi
        n_dark += r < lo
    # an arc of 9 always covers at least two of the four compass points
    ys, xs = np.nonzero((n_bright >= 2) | (n_dark >= 2))
    if ys.size == 0:
        return ys, xs
    ys = ys + b
    xs = xs + b
    centre = img[ys, xs]
    vals = np.stack([img[ys + dy, xs + dx] for dx, dy in _CIRCLE])
    weights = (1 << np.arange(16, dtype=np.uint32))[:, None]
    keep = np.zeros(ys.size, dtype=bool)
    for bits in (vals > centre + threshold, vals < centre - threshold):
        m = (bits.astype(np.uint32) * weights).sum(axis=0, dtype=np.uint32)
        m = m | (m << 16)
        run = m.copy()
        for k in range(1, 9):
            run &= m >> k
        keep |= (run & 0xFFFF) != 0
    return ys[keep], xs[keep]


def _harris(img, ys, xs, k, block, chunk=20000):
    """Harris response at the given pixels (Sobel gradients, mean over a block).

    Equivalent to the dense computation for pixels at least ``block // 2 + 1``
    from the border, evaluated only where needed.
    """
    r = block // 2 + 1
    off = np.arange(-r, r + 1)
    out = np.empty(ys.size)
    for start in range(0, ys.size, chunk):
        cy = ys[start:start + chunk, None, None] + off[None, :, None]
        cx = xs[start:start + chunk, None, None] + off[None, None, :]
        patch = img[cy, cx]
        dx = patch[:, :, 2:] - patch[:, :, :-2]
        ix = dx[:, :-2] + 2.0 * dx[:, 1:-1] + dx[:, 2:]
        dy = patch[:, 2:, :] - patch[:, :-2, :]
        iy = dy[:, :, :-2] + 2.0 * dy[:, :, 1:-1] + dy[:, :, 2:]
        sxx = (ix * ix).mean(axis=(1, 2))
        syy = (iy * iy).mean(axis=(1, 2))
        sxy = (ix * iy).mean(axis=(1, 2))
        out[start:start + chunk] = sxx * syy - sxy * sxy - k * (sxx + syy) ** 2
    return out


def _level_corners(level: _Level, threshold, params):
    ys, xs = _fast_candidates(level.image, threshold, EDGE)
    if level.mask is not None and ys.size:
        ok = level.mask[ys, xs]
        ys, xs = ys[ok], xs[ok]
    if ys.size == 0:
        return ys, xs, np.zeros(0)
    resp = _harris(level.image, ys, xs, params.harris_k, params.harris_block)
    score = np.full(level.image.shape, -np.inf)
    score[ys, xs] = resp
    keep = np.ones(ys.size, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx or dy:
                keep &= resp >= score[ys + dy, xs + dx]
    return ys[keep], xs[keep], resp[keep]


def _disk_offsets(radius):
    r = np.arange(-radius, radius + 1)
    dx, dy = np.meshgrid(r, r)
    inside = dx * dx + dy * dy <= radius * radius
    return dx[inside], dy[inside]


_DISK = _disk_offsets(PATCH_RADIUS)


def _centroid_angles(img, xs, ys):
    dx, dy = _DISK
    patch = img[ys[:, None] + dy[None, :], xs[:, None] + dx[None, :]]
    m10 = patch @ dx.astype(float)
    m01 = patch @ dy.astype(float)
    return np.arctan2(m01, m10)


def _detect(levels, max_points, params):
    def collect(threshold):
        found = []
        for level in levels:
            ys, xs, resp = _level_corners(level, threshold, params)
            found.append((level, ys, xs, resp))
        return found

    found = collect(params.fast_threshold)
    total = sum(f[1].size for f in found)
    if total < max_points / 4.0 and params.fast_threshold_low < params.fast_threshold:
        found = collect(params.fast_threshold_low)

    rows = []
    for level, ys, xs, resp in found:
        if ys.size == 0:
            continue
        bx, by = level.to_base(xs.astype(float), ys.astype(float))
        rows.append((bx, by, resp, np.full(ys.size, level.index), xs, ys))
    if not rows:
        return []
    bx, by, resp, lev, lx, ly = (np.concatenate(c) for c in zip(*rows))
    order = np.lexsort((bx, by, -resp))[:max_points]
    bx, by, resp, lev, lx, ly = bx[order], by[order], resp[order], lev[order], lx[order], ly[order]

    angles = np.empty(order.size)
    for level in levels:
        sel = lev == level.index
        if sel.any():
            angles[sel] = _centroid_angles(level.image, lx[sel], ly[sel])
    return [
        Keypoint(float(bx[i]), float(by[i]), float(resp[i]), float(angles[i]),
                 params.scale_factor ** int(lev[i]), int(lev[i]))
        for i in range(order.size)
    ]


def detect_oriented_corners(img, max_points: int = 1000, mask=None, params: OrbParams = OrbParams()):
    """Segment-test corners over the pyramid, best ``max_points`` by Harris response.

    Output is sorted by descending response with ``(y, x)`` tie-break. Images
    smaller than 32 pixels on a side yield no keypoints. ``mask`` (same
    shape as the image, True = usable) restricts where corners may lie.
    """
    img = as_gray(img)
    if min(img.shape) < 32 or max_points <= 0:
        return []
    levels = _build_pyramid(img, _as_mask(mask, img.shape), params)
    return _detect(levels, max_points, params)


def _as_mask(mask, shape):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {shape}")
    return mask


def _describe(levels, kps):
    pattern = load_pattern()
    by_level = {lv.index: lv for lv in levels}
    kept = []
    lxs, lys, angs, levs = [], [], [], []
    for kp in kps:
        level = by_level.get(kp.octave)
        if level is None:
            continue
        fx, fy = level.from_base(kp.x, kp.y)
        lx, ly = int(round(fx)), int(round(fy))
        h, w = level.image.shape
        if lx < EDGE or ly < EDGE or lx >= w - EDGE or ly >= h - EDGE:
            continue
        kept.append(kp)
        lxs.append(lx)
        lys.append(ly)
        angs.append(kp.orientation)
        levs.append(kp.octave)
    if not kept:
        return [], np.zeros((0, N_BYTES), np.uint8)
    lxs = np.array(lxs)
    lys = np.array(lys)
    angs = np.array(angs)
    levs = np.array(levs)
    c = np.cos(angs)[:, None]
    s = np.sin(angs)[:, None]
    x1, y1, x2, y2 = (pattern[:, i][None, :].astype(float) for i in range(4))
    rx1 = np.rint(x1 * c - y1 * s).astype(np.int64)
    ry1 = np.rint(x1 * s + y1 * c).astype(np.int64)
    rx2 = np.rint(x2 * c - y2 * s).astype(np.int64)
    ry2 = np.rint(x2 * s + y2 * c).astype(np.int64)
    bits = np.zeros((len(kept), N_BITS), dtype=bool)
    for index in np.unique(levs):
        sel = levs == index
        sm = by_level[int(index)].smoothed()
        px, py = lxs[sel][:, None], lys[sel][:, None]
        a = sm[py + ry1[sel], px + rx1[sel]]
        b = sm[py + ry2[sel], px + rx2[sel]]
        bits[sel] = a < b
    return kept, np.packbits(bits, axis=1)


def describe_binary(img, kps, params: OrbParams = OrbParams()):
    """Binary descriptors for ``kps``; returns ``(surviving_kps, (N, 32) uint8)``.

    Keypoints closer than 20 pixels to the border of their pyramid level are
    dropped. Each bit compares two Gaussian-smoothed intensities at pattern
    offsets rotated by the keypoint orientation.
    """
    img = as_gray(img)
    levels = _build_pyramid(img, None, params)
    return _describe(levels, kps)


def detect_and_describe_binary(img, max_points: int = 1000, mask=None, params: OrbParams = OrbParams()):
    """Detection and description sharing one pyramid."""
    img = as_gray(img)
    if min(img.shape) < 32 or max_points <= 0:
        return [], np.zeros((0, N_BYTES), np.uint8)
    levels = _build_pyramid(img, _as_mask(mask, img.shape), params)
    kps = _detect(levels, max_points, params)
    return _describe(levels, kps)


# ---------------------------------------------------------------- matching

def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.bitwise_count(np.bitwise_xor(a, b)).sum())


def _hamming_matrix(desc_a, desc_b):
    a = np.ascontiguousarray(desc_a, dtype=np.uint8).view(np.uint64)
    b = np.ascontiguousarray(desc_b, dtype=np.uint8).view(np.uint64)
    dist = np.zeros((a.shape[0], b.shape[0]), dtype=np.int32)
    for word in range(a.shape[1]):
        dist += np.bitwise_count(a[:, word, None] ^ b[None, :, word])
    return dist


def match_hamming(desc_a, desc_b, ratio: float = 0.75, chunk: int = 2048):
    """Nearest / second-nearest Hamming matching with a ratio test.

    A match ``i -> j`` is kept iff ``d1 < ratio * d2``. With a single
    candidate the second distance counts as 256. Equal distances resolve to
    the lower index in ``desc_b``. Output is ordered by ``idx_a``.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    desc_a = np.asarray(desc_a, dtype=np.uint8).reshape(-1, N_BYTES)
    desc_b = np.asarray(desc_b, dtype=np.uint8).reshape(-1, N_BYTES)
    na, nb = desc_a.shape[0], desc_b.shape[0]
    if na == 0 or nb == 0:
        return []
    out = []
    for start in range(0, na, chunk):
        dist = _hamming_matrix(desc_a[start:start + chunk], desc_b)
        rows = np.arange(dist.shape[0])
        j1 = np.argmin(dist, axis=1)
        d1 = dist[rows, j1]
        if nb > 1:
            dist[rows, j1] = N_BITS + 1
            d2 = dist.min(axis=1)
        else:
            d2 = np.full(dist.shape[0], N_BITS)
        for i in np.nonzero(d1 < ratio * d2)[0]:
            out.append(MatchPair(int(start + i), int(j1[i]), float(d1[i])))
    return out
