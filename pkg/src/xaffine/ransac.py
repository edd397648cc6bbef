"""Homography estimation: normalised DLT inside a seeded adaptive RANSAC loop."""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "normalized_dlt",
    "estimate_homography_ransac",
    "transfer_error",
    "symmetric_transfer_error",
    "RansacError",
]


class RansacError(ValueError):
    pass


def _normalizer(pts):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def normalized_dlt(src, dst) -> np.ndarray:
    """Least-squares homography ``dst ~ H src`` from four or more points.

    Hartley normalisation, SVD null vector, scaled so ``H[2, 2] == 1``.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("src and dst must both be (N, 2)")
    if len(src) < 4:
        raise RansacError(f"need at least 4 correspondences, got {len(src)}")
    ts, td = _normalizer(src), _normalizer(dst)
    a = _hom(src) @ ts.T
    b = _hom(dst) @ td.T
    n = len(src)
    rows = np.zeros((2 * n, 9))
    rows[0::2, 0:3] = a
    rows[0::2, 6:9] = -b[:, 0:1] * a
    rows[1::2, 3:6] = a
    rows[1::2, 6:9] = -b[:, 1:2] * a
    _, _, vt = np.linalg.svd(rows)
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ h @ ts
    if abs(h[2, 2]) < 1e-12:
        raise RansacError("degenerate homography")
    return h / h[2, 2]


def _hom(p):
    return np.hstack([p, np.ones((len(p), 1))])


def transfer_error(h, src, dst) -> np.ndarray:
    """Euclidean distance between ``H src`` (projectively divided) and ``dst``."""
    p = _hom(np.asarray(src, dtype=float)) @ np.asarray(h, dtype=float).T
    with np.errstate(divide="ignore", invalid="ignore"):
        q = p[:, :2] / p[:, 2:3]
    err = np.linalg.norm(q - dst, axis=1)
    err[~np.isfinite(err)] = np.inf
    return err


def symmetric_transfer_error(h, src, dst) -> np.ndarray:
    """Root-mean-square of the forward and backward transfer errors."""
    try:
        hinv = np.linalg.inv(h)
    except np.linalg.LinAlgError:
        return np.full(len(src), np.inf)
    fwd = transfer_error(h, src, dst)
    bwd = transfer_error(hinv, dst, src)
    return np.sqrt(0.5 * (fwd * fwd + bwd * bwd))


def _collinear3(pts, tol=1e-9):
    scale = max(1.0, float(np.abs(pts).max()))
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        u = pts[j] - pts[i]
        v = pts[k] - pts[i]
        if abs(u[0] * v[1] - u[1] * v[0]) <= tol * scale * scale:
            return True
    return False


def _needed(inlier_frac, confidence):
    if inlier_frac >= 1.0:
        return 0
    if inlier_frac <= 0.0:
        return math.inf
    denom = math.log(1.0 - inlier_frac**4)
    if denom == 0.0:
        return math.inf
    return math.log(1.0 - confidence) / denom


def estimate_homography_ransac(src, dst, threshold: float = 3.0, max_iters: int = 2000,
                               confidence: float = 0.995, seed: int = 42):
    """Robust homography; returns ``(H, inlier_indices)``.

    Samples four correspondences per iteration (rejecting samples with three
    collinear points in either image), stops once the adaptive bound for
    ``confidence`` is reached and refits on the final consensus set.
    Deterministic for a given ``seed``.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("src and dst must both be (N, 2)")
    n = len(src)
    if n < 4:
        raise RansacError(f"need at least 4 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    best = np.zeros(0, dtype=np.int64)
    best_err = math.inf
    limit = max_iters
    it = 0
    while it < limit:
        it += 1
        pick = rng.choice(n, 4, replace=False)
        if _collinear3(src[pick]) or _collinear3(dst[pick]):
            continue
        try:
            h = normalized_dlt(src[pick], dst[pick])
        except (RansacError, np.linalg.LinAlgError):
            continue
        err = symmetric_transfer_error(h, src, dst)
        inl = np.nonzero(err < threshold)[0]
        score = float(err[inl].sum()) if inl.size else math.inf
        if inl.size > best.size or (inl.size == best.size and inl.size and score < best_err):
            best, best_err = inl, score
            limit = min(max_iters, max(it, math.ceil(_needed(inl.size / n, confidence))))
    if best.size < 4:
        raise RansacError("no consensus: fewer than 4 inliers")
    h = normalized_dlt(src[best], dst[best])
    # one more refit on the consensus set of the refined model
    inl = np.nonzero(symmetric_transfer_error(h, src, dst) < threshold)[0]
    if inl.size >= 4:
        h2 = normalized_dlt(src[inl], dst[inl])
        inl2 = np.nonzero(symmetric_transfer_error(h2, src, dst) < threshold)[0]
        if inl2.size >= inl.size:
            h, inl = h2, inl2
        best = inl
    return h, best
