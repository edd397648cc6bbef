"""Difference-of-Gaussians keypoints with 128-value gradient-histogram descriptors.

The accurate feature engine: used for reference selection and for the fine
matching stage. Conventions are the classic ones: three scales per octave,
base blur 1.6 after a 2x upsample, contrast threshold 0.03 on intensities
in ``[0, 1]``, edge ratio 10, 36-bin orientation histograms and a 4x4x8
descriptor normalised, clipped at 0.2, renormalised and scaled to 512.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .features import Keypoint, MatchPair
from .imgio import as_gray

__all__ = [
    "SiftParams",
    "ScaleSpace",
    "detect_dog_keypoints",
    "describe_gradient",
    "detect_and_describe_gradient",
    "match_ratio",
    "DESCRIPTOR_NORM",
    "MAX_DESCRIPTOR_DISTANCE",
]

DESCRIPTOR_NORM = 512.0
# two non-negative vectors of norm 512 are at most 512 * sqrt(2) apart; the
# matcher's degenerate-case rule uses the looser bound 2 * 512
MAX_DESCRIPTOR_DISTANCE = 1024.0


@dataclass(frozen=True)
class SiftParams:
    n_layers: int = 3
    sigma: float = 1.6
    init_sigma: float = 0.5
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    upsample: bool = True
    border: int = 5
    max_refine_steps: int = 5
    ori_bins: int = 36
    ori_peak_ratio: float = 0.8
    ori_sigma_factor: float = 1.5
    ori_radius_factor: float = 3.0
    desc_width: int = 4
    desc_bins: int = 8
    desc_hist_factor: float = 3.0
    desc_clip: float = 0.2


class ScaleSpace:
    """Gaussian and difference-of-Gaussian pyramids of one image.

    Octave ``o`` pixel ``i`` sits at base coordinate ``i * 2**(o-1) - 0.25``
    when the base was upsampled (``i * 2**o`` otherwise).
    """

    def __init__(self, img: np.ndarray, params: SiftParams = SiftParams()):
        self.params = params
        img = as_gray(img).astype(np.float32) / np.float32(255.0)
        p = params
        if p.upsample:
            img = _upsample2(img)
            blur0 = 2.0 * p.init_sigma
        else:
            blur0 = p.init_sigma
        sig_diff = math.sqrt(max(p.sigma**2 - blur0**2, 0.01))
        base = ndimage.gaussian_filter(img, sig_diff, mode="reflect")
        k = 2.0 ** (1.0 / p.n_layers)
        steps = [0.0]
        for i in range(1, p.n_layers + 3):
            prev = p.sigma * k ** (i - 1)
            steps.append(math.sqrt((prev * k) ** 2 - prev**2))
        n_oct = max(1, int(round(math.log2(min(base.shape)))) - 2)
        self.gauss = []
        self.dog = []
        cur = base
        for o in range(n_oct):
            if min(cur.shape) < 2 * p.border + 3:
                break
            layers = [cur]
            for i in range(1, p.n_layers + 3):
                layers.append(ndimage.gaussian_filter(layers[-1], steps[i], mode="reflect"))
            stack = np.stack(layers)
            self.gauss.append(stack)
            self.dog.append(stack[1:] - stack[:-1])
            cur = stack[p.n_layers][::2, ::2]
        self._up = 0.5 if p.upsample else 1.0

    @property
    def n_octaves(self):
        return len(self.gauss)

    def octave_step(self, o):
        """Base-image pixels per octave pixel."""
        return self._up * 2.0**o

    def to_base(self, o, x, y):
        step = self.octave_step(o)
        shift = 0.5 * self._up - 0.5
        return x * step + shift, y * step + shift

    def from_base(self, o, x, y):
        step = self.octave_step(o)
        shift = 0.5 * self._up - 0.5
        return (x - shift) / step, (y - shift) / step


def _upsample2(img):
    h, w = img.shape

    def axis(n):
        src = np.clip((np.arange(2 * n) + 0.5) / 2.0 - 0.5, 0, n - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n - 1)
        return i0, i1, (src - i0).astype(np.float32)

    x0, x1, fx = axis(w)
    tmp = img[:, x0] * (1 - fx) + img[:, x1] * fx
    y0, y1, fy = axis(h)
    return tmp[y0] * (1 - fy)[:, None] + tmp[y1] * fy[:, None]


# ---------------------------------------------------------------- detection

@dataclass
class _Candidates:
    octave: np.ndarray
    layer: np.ndarray      # fractional layer index
    x: np.ndarray          # octave coordinates
    y: np.ndarray
    response: np.ndarray   # |D| at the refined extremum


def _refine(dog, layer, ys, xs, p: SiftParams):
    """Quadratic sub-pixel refinement of integer extrema in one octave."""
    n_s, h, w = dog.shape
    s = p.n_layers
    b = p.border
    layer = layer.copy()
    ys = ys.copy()
    xs = xs.copy()
    alive = np.ones(ys.size, dtype=bool)
    done = np.zeros(ys.size, dtype=bool)
    off = np.zeros((ys.size, 3))
    grad = np.zeros((ys.size, 3))
    hxx = np.zeros(ys.size)
    hyy = np.zeros(ys.size)
    hxy = np.zeros(ys.size)
    for _ in range(p.max_refine_steps):
        idx = np.nonzero(alive & ~done)[0]
        if idx.size == 0:
            break
        l, y, x = layer[idx], ys[idx], xs[idx]
        v = dog[l, y, x].astype(np.float64)

        def at(dl, dy, dx):
            return dog[l + dl, y + dy, x + dx].astype(np.float64)

        dx = 0.5 * (at(0, 0, 1) - at(0, 0, -1))
        dy = 0.5 * (at(0, 1, 0) - at(0, -1, 0))
        ds = 0.5 * (at(1, 0, 0) - at(-1, 0, 0))
        dxx = at(0, 0, 1) + at(0, 0, -1) - 2 * v
        dyy = at(0, 1, 0) + at(0, -1, 0) - 2 * v
        dss = at(1, 0, 0) + at(-1, 0, 0) - 2 * v
        dxy = 0.25 * (at(0, 1, 1) - at(0, 1, -1) - at(0, -1, 1) + at(0, -1, -1))
        dxs = 0.25 * (at(1, 0, 1) - at(1, 0, -1) - at(-1, 0, 1) + at(-1, 0, -1))
        dys = 0.25 * (at(1, 1, 0) - at(1, -1, 0) - at(-1, 1, 0) + at(-1, -1, 0))
        hess = np.stack([
            np.stack([dxx, dxy, dxs], -1),
            np.stack([dxy, dyy, dys], -1),
            np.stack([dxs, dys, dss], -1),
        ], -2)
        g = np.stack([dx, dy, ds], -1)
        det = np.linalg.det(hess)
        ok = np.abs(det) > 1e-15
        sol = np.zeros_like(g)
        if ok.any():
            sol[ok] = -np.linalg.solve(hess[ok], g[ok][..., None])[..., 0]
        alive[idx[~ok]] = False
        small = ok & np.all(np.abs(sol) < 0.5, axis=1)
        conv = idx[small]
        done[conv] = True
        off[conv] = sol[small]
        grad[conv] = g[small]
        hxx[conv] = dxx[small]
        hyy[conv] = dyy[small]
        hxy[conv] = dxy[small]
        move = idx[ok & ~small]
        step = np.rint(sol[ok & ~small]).astype(np.int64)
        xs[move] += step[:, 0]
        ys[move] += step[:, 1]
        layer[move] += step[:, 2]
        bad = (
            (layer[move] < 1) | (layer[move] > s)
            | (xs[move] < b) | (xs[move] >= w - b)
            | (ys[move] < b) | (ys[move] >= h - b)
        )
        alive[move[bad]] = False
    keep = np.nonzero(alive & done)[0]
    layer, ys, xs, off, grad = layer[keep], ys[keep], xs[keep], off[keep], grad[keep]
    hxx, hyy, hxy = hxx[keep], hyy[keep], hxy[keep]
    value = dog[layer, ys, xs].astype(np.float64)
    contrast = value + 0.5 * np.sum(grad * off, axis=1)
    tr = hxx + hyy
    det2 = hxx * hyy - hxy * hxy
    r = p.edge_ratio
    ok = np.abs(contrast) >= p.contrast_threshold
    ok &= (det2 > 0) & (tr * tr * r < (r + 1) ** 2 * det2)
    return (layer[ok] + off[ok, 2], xs[ok] + off[ok, 0], ys[ok] + off[ok, 1],
            np.abs(contrast[ok]), np.stack([layer[ok], ys[ok], xs[ok]], 1))


def _find_extrema(ss: ScaleSpace, mask_base):
    p = ss.params
    b = p.border
    pre = 0.5 * p.contrast_threshold / p.n_layers
    out = []
    for o, dog in enumerate(ss.dog):
        n_s, h, w = dog.shape
        if h <= 2 * b or w <= 2 * b:
            continue
        mx = ndimage.maximum_filter(dog, size=3, mode="nearest")
        mn = ndimage.minimum_filter(dog, size=3, mode="nearest")
        inner = dog[1:-1, b:h - b, b:w - b]
        is_ext = ((inner == mx[1:-1, b:h - b, b:w - b]) & (inner > pre)) | (
            (inner == mn[1:-1, b:h - b, b:w - b]) & (inner < -pre))
        ls, ys, xs = np.nonzero(is_ext)
        ls = ls + 1
        ys = ys + b
        xs = xs + b
        if ls.size == 0:
            continue
        lay, x, y, resp, ints = _refine(dog, ls, ys, xs, p)
        if lay.size == 0:
            continue
        # several seeds can converge onto the same sample point
        _, first = np.unique(ints, axis=0, return_index=True)
        first = np.sort(first)
        lay, x, y, resp = lay[first], x[first], y[first], resp[first]
        if mask_base is not None:
            bx, by = ss.to_base(o, x, y)
            mh, mw = mask_base.shape
            ix = np.clip(np.rint(bx).astype(np.int64), 0, mw - 1)
            iy = np.clip(np.rint(by).astype(np.int64), 0, mh - 1)
            ok = mask_base[iy, ix]
            lay, x, y, resp = lay[ok], x[ok], y[ok], resp[ok]
        out.append(_Candidates(np.full(lay.size, o), lay, x, y, resp))
    if not out:
        return _Candidates(*(np.zeros(0) for _ in range(5)))
    return _Candidates(*(np.concatenate([getattr(c, f) for c in out])
                         for f in ("octave", "layer", "x", "y", "response")))


def _octave_sigma(p: SiftParams, layer):
    return p.sigma * 2.0 ** (np.asarray(layer) / p.n_layers)


def _orientations(ss: ScaleSpace, o, layer, x, y):
    """Dominant gradient directions (radians, image coordinates) at one keypoint."""
    p = ss.params
    img = ss.gauss[o][int(np.clip(round(layer), 0, p.n_layers + 2))]
    h, w = img.shape
    sig = p.ori_sigma_factor * float(_octave_sigma(p, layer))
    rad = int(round(p.ori_radius_factor * sig))
    px, py = int(round(x)), int(round(y))
    x0, x1 = max(1, px - rad), min(w - 2, px + rad)
    y0, y1 = max(1, py - rad), min(h - 2, py + rad)
    if x1 < x0 or y1 < y0:
        return []
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    gx = (img[y0:y1 + 1, x0 + 1:x1 + 2] - img[y0:y1 + 1, x0 - 1:x1]).astype(np.float64)
    gy = (img[y0 + 1:y1 + 2, x0:x1 + 1] - img[y0 - 1:y1, x0:x1 + 1]).astype(np.float64)
    dx = xx - px
    dy = yy - py
    wgt = np.exp(-(dx * dx + dy * dy) / (2.0 * sig * sig))
    n = p.ori_bins
    ang = np.arctan2(gy, gx)
    bins = np.rint(ang * n / (2 * np.pi)).astype(np.int64) % n
    hist = np.bincount(bins.ravel(), weights=(np.hypot(gx, gy) * wgt).ravel(), minlength=n)
    smooth = (np.roll(hist, 2) + np.roll(hist, -2) + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
              + 6 * hist) / 16.0
    peak = smooth.max()
    if peak <= 0:
        return []
    left = np.roll(smooth, 1)
    right = np.roll(smooth, -1)
    result = []
    for i in np.nonzero((smooth > left) & (smooth > right) & (smooth >= p.ori_peak_ratio * peak))[0]:
        denom = left[i] - 2 * smooth[i] + right[i]
        delta = 0.5 * (left[i] - right[i]) / denom if denom != 0 else 0.0
        result.append(((i + delta) * 2 * np.pi / n) % (2 * np.pi))
    return result


def _select(ss: ScaleSpace, cand: _Candidates, max_points: int):
    """Cap candidates, assign orientations, cap again; returns keypoint list."""
    bx, by = ss.to_base(cand.octave, cand.x, cand.y) if cand.x.size else (cand.x, cand.y)
    order = np.lexsort((bx, by, -cand.response))[:max_points]
    kps = []
    for i in order:
        o = int(cand.octave[i])
        sigma_base = float(_octave_sigma(ss.params, cand.layer[i])) * ss.octave_step(o)
        for ang in _orientations(ss, o, cand.layer[i], cand.x[i], cand.y[i]):
            kps.append(Keypoint(float(bx[i]), float(by[i]), float(cand.response[i]),
                                float(ang), sigma_base, o))
    # duplicates share response and position; keep the first ones
    kps.sort(key=lambda k: (-k.response, k.y, k.x))
    return kps[:max_points]


def detect_dog_keypoints(img, max_points: int = 1000, mask=None, params: SiftParams = SiftParams()):
    """DoG scale-space extrema, best ``max_points`` by ``|D|`` with ``(y, x)`` tie-break.

    Images smaller than 64 pixels on a side yield no keypoints.
    """
    img = as_gray(img)
    if min(img.shape) < 64 or max_points <= 0:
        return []
    ss = ScaleSpace(img, params)
    return _select(ss, _find_extrema(ss, _mask(mask, img.shape)), max_points)


def _mask(mask, shape):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {shape}")
    return mask


# ---------------------------------------------------------------- description

def _descriptor(ss: ScaleSpace, kp: Keypoint):
    p = ss.params
    o = kp.octave
    if o >= ss.n_octaves:
        return None
    x, y = ss.from_base(o, kp.x, kp.y)
    sig = kp.octave_scale / ss.octave_step(o)
    layer = p.n_layers * math.log2(sig / p.sigma)
    img = ss.gauss[o][int(np.clip(round(layer), 0, p.n_layers + 2))]
    h, w = img.shape
    d, n = p.desc_width, p.desc_bins
    hist_w = p.desc_hist_factor * sig
    half = 0.5 * d * hist_w
    if x - half < 0 or y - half < 0 or x + half > w - 1 or y + half > h - 1:
        return None
    rad = int(round(hist_w * math.sqrt(2) * (d + 1) * 0.5))
    px, py = int(round(x)), int(round(y))
    x0, x1 = max(1, px - rad), min(w - 2, px + rad)
    y0, y1 = max(1, py - rad), min(h - 2, py + rad)
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    ox = (xx - x).ravel()
    oy = (yy - y).ravel()
    c, s = math.cos(kp.orientation), math.sin(kp.orientation)
    u = (ox * c + oy * s) / hist_w
    v = (-ox * s + oy * c) / hist_w
    rbin = v + 0.5 * d - 0.5
    cbin = u + 0.5 * d - 0.5
    inside = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    gx = (img[y0:y1 + 1, x0 + 1:x1 + 2] - img[y0:y1 + 1, x0 - 1:x1]).astype(np.float64).ravel()[inside]
    gy = (img[y0 + 1:y1 + 2, x0:x1 + 1] - img[y0 - 1:y1, x0:x1 + 1]).astype(np.float64).ravel()[inside]
    rbin, cbin, u, v = rbin[inside], cbin[inside], u[inside], v[inside]
    wgt = np.exp(-(u * u + v * v) / (2.0 * (0.5 * d) ** 2))
    mag = np.hypot(gx, gy) * wgt
    obin = ((np.arctan2(gy, gx) - kp.orientation) * n / (2 * np.pi)) % n
    r0 = np.floor(rbin).astype(np.int64)
    c0 = np.floor(cbin).astype(np.int64)
    o0 = np.floor(obin).astype(np.int64)
    dr, dc, do = rbin - r0, cbin - c0, obin - o0
    hist = np.zeros((d + 2) * (d + 2) * n)
    for ri, wr in ((0, 1 - dr), (1, dr)):
        for ci, wc in ((0, 1 - dc), (1, dc)):
            for oi, wo in ((0, 1 - do), (1, do)):
                idx = ((r0 + ri + 1) * (d + 2) + (c0 + ci + 1)) * n + (o0 + oi) % n
                hist += np.bincount(idx, weights=mag * wr * wc * wo, minlength=hist.size)
    vec = hist.reshape(d + 2, d + 2, n)[1:d + 1, 1:d + 1].ravel()
    norm = np.linalg.norm(vec)
    if norm <= 0:
        return None
    vec = np.minimum(vec / norm, p.desc_clip)
    norm = np.linalg.norm(vec)
    return vec * (DESCRIPTOR_NORM / norm)


def _describe(ss: ScaleSpace, kps):
    kept, rows = [], []
    for kp in kps:
        vec = _descriptor(ss, kp)
        if vec is not None:
            kept.append(kp)
            rows.append(vec)
    if not rows:
        return [], np.zeros((0, 128))
    return kept, np.array(rows)


def describe_gradient(img, kps, params: SiftParams = SiftParams()):
    """128-value descriptors; returns ``(surviving_kps, (N, 128) float array)``.

    Keypoints whose 4x4 histogram grid would extend past the octave image are
    dropped. Every row has L2 norm 512.
    """
    img = as_gray(img)
    if not kps:
        return [], np.zeros((0, 128))
    return _describe(ScaleSpace(img, params), kps)


def detect_and_describe_gradient(img, max_points: int = 1000, mask=None, params: SiftParams = SiftParams()):
    img = as_gray(img)
    if min(img.shape) < 64 or max_points <= 0:
        return [], np.zeros((0, 128))
    ss = ScaleSpace(img, params)
    kps = _select(ss, _find_extrema(ss, _mask(mask, img.shape)), max_points)
    return _describe(ss, kps)


# ---------------------------------------------------------------- matching

def match_ratio(desc_a, desc_b, ratio: float = 0.75, chunk: int = 1024):
    """Euclidean nearest / second-nearest matching with a ratio test.

    Keeps ``i -> j`` iff ``d1 < ratio * d2``; ``distance`` is ``d1``. With a
    single candidate the second distance counts as 1024. Ties go to the
    lower index in ``desc_b``.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    a = np.asarray(desc_a, dtype=np.float64)
    b = np.asarray(desc_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        return []
    a = a.reshape(a.shape[0], -1)
    b = b.reshape(b.shape[0], -1)
    nb = b.shape[0]
    b_sq = np.einsum("ij,ij->i", b, b)
    out = []
    for start in range(0, a.shape[0], chunk):
        blk = a[start:start + chunk]
        d2 = np.einsum("ij,ij->i", blk, blk)[:, None] + b_sq[None, :] - 2.0 * blk @ b.T
        k = min(3, nb)
        # the Gram-matrix shortcut only ranks; exact distances are recomputed
        near = np.argpartition(d2, k - 1, axis=1)[:, :k] if nb > k else np.tile(np.arange(nb), (blk.shape[0], 1))
        diff = blk[:, None, :] - b[near]
        exact = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        for i in range(blk.shape[0]):
            cand = sorted(zip(exact[i].tolist(), near[i].tolist()))
            d1, j1 = cand[0]
            second = cand[1][0] if len(cand) > 1 else MAX_DESCRIPTOR_DISTANCE
            if d1 < ratio * second:
                out.append(MatchPair(start + i, int(j1), float(d1)))
    return out
