"""Single-image affine simulation matching.

``match_images`` runs three stages:

1. reference selection, which decides which image shows the scene at the
   larger scale, using a weighted sum of matched-segment length differences;
2. coarse search, which warps the reference over the viewpoint grid with
   nearest-neighbour sampling and counts binary-descriptor matches
   against the target;
3. fine matching, which re-renders the best pose with Lanczos sampling
   and matches gradient descriptors, filtered by RANSAC.

``asift_baseline`` simulates both images and matches every pair of views.
``fine_only`` skips simulation altogether.
"""
from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .features import Keypoint, MatchPair, keypoint_array
from .geometry import (
    AffineParams,
    GridConfig,
    ParamGrid,
    build_param_grid,
    invert,
    map_points,
    simulation_matrix,
)
from .imgio import as_gray
from .orb import detect_and_describe_binary, match_hamming
from .ransac import RansacError, estimate_homography_ransac
from .sift import detect_and_describe_gradient, match_ratio
from .warp import antialias_tilt, warp_lanczos, warp_nearest

__all__ = [
    "PipelineError",
    "ReferenceDecision",
    "CoarseResult",
    "MatchResult",
    "scaling_coefficient",
    "select_reference",
    "coarse_search",
    "fine_match",
    "match_images",
    "asift_baseline",
    "fine_only",
    "thread_count",
]

# denominator of the descriptor-distance weight
_WEIGHT_DENOM = 1000.0
DUPLICATE_RADIUS = 2.0


class PipelineError(RuntimeError):
    """A stage failure; ``stage`` names the stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def thread_count() -> int:
    """Worker cap from ``XAFFINE_THREADS``; 0 or unset means one per CPU."""
    raw = os.environ.get("XAFFINE_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def _map_ordered(fn, items, threads):
    threads = thread_count() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- reference selection

@dataclass(frozen=True)
class ReferenceDecision:
    reference: int
    f_forward: float
    f_backward: float
    segment_count: int
    fallback: bool = False

    def as_dict(self) -> dict:
        return {
            "reference": self.reference,
            "f_forward": _num(self.f_forward),
            "f_backward": _num(self.f_backward),
            "segment_count": self.segment_count,
            "fallback": self.fallback,
        }


def _num(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _scaling_terms(kps_a, kps_b, matches):
    if len(matches) < 2:
        raise ValueError("insufficient matches for scaling estimation")
    ranked = sorted(matches, key=lambda m: m.distance)
    pa = keypoint_array(kps_a)
    pb = keypoint_array(kps_b)
    total = 0.0
    count = 0
    i = 0
    while 4 * i + 1 < len(ranked):
        m0, m1 = ranked[4 * i], ranked[4 * i + 1]
        dis_a = float(np.hypot(*(pa[m0.idx_a] - pa[m1.idx_a])))
        dis_b = float(np.hypot(*(pb[m0.idx_b] - pb[m1.idx_b])))
        w = max(0.0, 1.0 - (m0.distance + m1.distance) / _WEIGHT_DENOM)
        total += (dis_a - dis_b) * w
        count += 1
        i += 1
    return total, count


def scaling_coefficient(kps_a, kps_b, matches) -> float:
    """Weighted sum of segment length differences from image A to image B.

    Matches are ranked by descriptor distance and segments join ranked
    matches ``4i`` and ``4i+1``. Each segment's length difference is weighted
    by ``max(0, 1 - (d_4i + d_4i+1) / 1000)``. A positive value means the
    segments are longer in A.
    """
    return _scaling_terms(kps_a, kps_b, matches)[0]


def select_reference(img1, img2, cap: int = 1000, ratio: float = 0.75, features=None) -> ReferenceDecision:
    """Choose the image holding more detail (larger ``f``); ties pick image 1.

    ``features`` may carry precomputed ``((kps1, desc1), (kps2, desc2))``.
    When either direction has fewer than two matches, the larger image wins.
    """
    img1, img2 = as_gray(img1), as_gray(img2)
    if features is None:
        features = (detect_and_describe_gradient(img1, cap), detect_and_describe_gradient(img2, cap))
    (k1, d1), (k2, d2) = features
    try:
        f1, n1 = _scaling_terms(k1, k2, match_ratio(d1, d2, ratio))
        f2, n2 = _scaling_terms(k2, k1, match_ratio(d2, d1, ratio))
    except ValueError:
        ref = 1 if img1.size >= img2.size else 2
        return ReferenceDecision(ref, math.nan, math.nan, 0, fallback=True)
    return ReferenceDecision(1 if f1 >= f2 else 2, f1, f2, n1 + n2)


# ---------------------------------------------------------------- coarse search

@dataclass
class CoarseResult:
    best_params: AffineParams
    best_count: int
    per_entry_counts: list

    def as_dict(self) -> dict:
        return {
            "best_params": self.best_params.as_dict(),
            "best_count": self.best_count,
            "per_entry_counts": [{"params": p.as_dict(), "count": c} for p, c in self.per_entry_counts],
        }


def _is_identity(p: AffineParams) -> bool:
    return p.tilt == 1.0 and p.scale == 1.0 and p.phi == 0.0 and p.psi == 0.0 and p.tx == 0.0 and p.ty == 0.0


def coarse_count(ref, p: AffineParams, target_desc, max_points: int = 1000, ratio: float = 0.75) -> int:
    """Binary matches between the nearest-neighbour simulation of ``ref`` at ``p`` and the target."""
    sim = warp_nearest(antialias_tilt(ref, p.tilt, p.phi), simulation_matrix(p))
    _, desc = detect_and_describe_binary(sim.image, max_points, mask=sim.mask)
    return len(match_hamming(desc, target_desc, ratio))


def coarse_search(ref, target, grid: ParamGrid, max_points: int = 1000, ratio: float = 0.75,
                  threads: int | None = None) -> CoarseResult:
    """Pose with the most coarse matches.

    Equal counts prefer the smaller tilt, then smaller scale, then smaller
    ``|phi|``, then grid order. Counts do not depend on ``threads``.
    """
    if len(grid) == 0:
        raise ValueError("empty parameter grid")
    ref, target = as_gray(ref), as_gray(target)
    _, tdesc = detect_and_describe_binary(target, max_points)
    entries = list(grid)
    counts = _map_ordered(lambda p: coarse_count(ref, p, tdesc, max_points, ratio), entries, threads)
    best = min(range(len(entries)), key=lambda i: (
        -counts[i], entries[i].tilt, entries[i].scale, abs(entries[i].phi), i))
    return CoarseResult(entries[best], counts[best], list(zip(entries, counts)))


# ---------------------------------------------------------------- fine stage

@dataclass
class MatchResult:
    """Correspondences from image 1 to image 2 plus diagnostics.

    ``matches`` rows are ``(x1, y1, x2, y2, distance)``. ``candidates`` counts
    ratio-test matches before RANSAC and ``n_inliers`` how many of them
    RANSAC kept. When the final filter is on, ``matches`` holds only those
    inliers.
    """

    matches: np.ndarray
    homography: np.ndarray
    inliers: np.ndarray
    candidates: int
    n_inliers: int
    timings: dict = field(default_factory=dict)
    decision: ReferenceDecision | None = None
    coarse: CoarseResult | None = None
    method: str = "proposed"

    @property
    def points(self) -> int:
        return int(len(self.matches))

    @property
    def inlier_ratio(self) -> float:
        """Percentage of ratio-test matches RANSAC accepted."""
        return 100.0 * self.n_inliers / self.candidates if self.candidates else 0.0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "points": self.points,
            "candidates": self.candidates,
            "inliers_count": self.n_inliers,
            "inlier_ratio_pct": self.inlier_ratio,
            "matches": [[float(v) for v in row] for row in self.matches],
            "homography": [float(v) for v in np.asarray(self.homography).ravel()],
            "inliers": [int(i) for i in self.inliers],
            "timings_ms": {k: float(v) for k, v in self.timings.items()},
            "decision": self.decision.as_dict() if self.decision else None,
            "coarse": self.coarse.as_dict() if self.coarse else None,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def swapped(self) -> "MatchResult":
        """Same result expressed from image 2 to image 1."""
        m = self.matches[:, [2, 3, 0, 1, 4]] if len(self.matches) else self.matches
        return MatchResult(m, _normalize(invert(self.homography)), self.inliers, self.candidates,
                           self.n_inliers, dict(self.timings), self.decision, self.coarse, self.method)


def _normalize(h):
    h = np.asarray(h, dtype=float)
    return h / h[2, 2] if abs(h[2, 2]) > 1e-15 else h


def _inside(pts, shape):
    h, w = shape
    return (pts[:, 0] >= -0.5) & (pts[:, 0] < w - 0.5) & (pts[:, 1] >= -0.5) & (pts[:, 1] < h - 0.5)


def _robust_result(p1, p2, dist, cfg: Config, stage: str):
    """RANSAC over correspondences and the optional final filter."""
    n = len(p1)
    if n < 4:
        raise PipelineError(stage, f"only {n} matches, need at least 4")
    try:
        h, inl = estimate_homography_ransac(p1, p2, cfg.ransac_threshold, cfg.ransac_max_iters,
                                            cfg.ransac_confidence, cfg.seed)
    except RansacError as exc:
        raise PipelineError(stage, str(exc)) from exc
    rows = np.column_stack([p1, p2, dist])
    if cfg.final_ransac_filter:
        rows = rows[inl]
        kept = np.arange(len(inl))
    else:
        kept = inl
    return rows, _normalize(h), kept, n, len(inl)


def _simulate(img, p: AffineParams, lanczos_a: int):
    """Lanczos rendering of ``img`` at pose ``p``: (image, forward, mask)."""
    if _is_identity(p):
        return img, np.eye(3), None
    w = warp_lanczos(antialias_tilt(img, p.tilt, p.phi), simulation_matrix(p), a=lanczos_a)
    return w.image, w.forward, w.mask


def _features_on(img, p: AffineParams, cfg: Config):
    """Gradient features of the simulated view with coordinates mapped back to ``img``."""
    sim, forward, mask = _simulate(img, p, cfg.lanczos_a)
    kps, desc = detect_and_describe_gradient(sim, cfg.max_points_fine, mask=mask)
    pts = map_points(invert(forward), keypoint_array(kps))
    return kps, desc, pts, forward


def fine_match(ref, target, p: AffineParams, cfg: Config = Config(), target_features=None) -> MatchResult:
    """Lanczos simulation at ``p``, gradient matching and RANSAC.

    The result maps original reference coordinates to target coordinates;
    its homography is the RANSAC estimate composed with the simulation map.
    """
    ref, target = as_gray(ref), as_gray(target)
    if target_features is None:
        target_features = detect_and_describe_gradient(target, cfg.max_points_fine)
    tkps, tdesc = target_features
    kps, desc, ref_pts, forward = _features_on(ref, p, cfg)
    matches = match_ratio(desc, tdesc, cfg.ratio)
    if not matches:
        raise PipelineError("fine", "no matches survived the ratio test")
    ia = np.array([m.idx_a for m in matches])
    ib = np.array([m.idx_b for m in matches])
    src = ref_pts[ia]
    dst = keypoint_array(tkps)[ib]
    dist = np.array([m.distance for m in matches])
    ok = _inside(src, ref.shape)
    rows, h, kept, n, n_in = _robust_result(src[ok], dst[ok], dist[ok], cfg, "fine")
    return MatchResult(rows, h, kept, n, n_in)


def match_images(img1, img2, cfg: Config = Config(), threads: int | None = None) -> MatchResult:
    """Full pipeline; matches and homography always go from image 1 to image 2."""
    img1, img2 = as_gray(img1), as_gray(img2)
    timings = {}
    t0 = time.perf_counter()
    try:
        feats = (detect_and_describe_gradient(img1, cfg.max_points_fine),
                 detect_and_describe_gradient(img2, cfg.max_points_fine))
        decision = select_reference(img1, img2, cfg.max_points_fine, cfg.ratio, features=feats)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("reference", str(exc)) from exc
    t1 = time.perf_counter()
    timings["reference"] = 1000.0 * (t1 - t0)
    if decision.reference == 1:
        ref, target, tfeat = img1, img2, feats[1]
    else:
        ref, target, tfeat = img2, img1, feats[0]
    try:
        coarse = coarse_search(ref, target, build_param_grid(cfg.grid), cfg.max_points_coarse,
                               cfg.ratio, threads)
    except Exception as exc:
        raise PipelineError("coarse", str(exc)) from exc
    t2 = time.perf_counter()
    timings["coarse"] = 1000.0 * (t2 - t1)
    try:
        res = fine_match(ref, target, coarse.best_params, cfg, target_features=tfeat)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("fine", str(exc)) from exc
    t3 = time.perf_counter()
    timings["fine"] = 1000.0 * (t3 - t2)
    timings["total"] = 1000.0 * (t3 - t0)
    if decision.reference == 2:
        res = res.swapped()
    res.timings = timings
    res.decision = decision
    res.coarse = coarse
    return res


# ---------------------------------------------------------------- comparisons

def fine_only(img1, img2, cfg: Config = Config()) -> MatchResult:
    """Gradient features, ratio test and RANSAC on the unmodified images."""
    img1, img2 = as_gray(img1), as_gray(img2)
    t0 = time.perf_counter()
    res = fine_match(img1, img2, AffineParams(), cfg)
    res.method = "fine-only"
    res.timings = {"total": 1000.0 * (time.perf_counter() - t0)}
    return res


def _merge(pairs, radius):
    """Concatenate per-view-pair matches, dropping repeats of earlier view pairs.

    A match repeats an earlier one when both of its endpoints lie within
    ``radius`` of the endpoints of a match from a previous view pair.
    """
    cell = radius
    table: dict = {}
    kept = []
    r2 = radius * radius
    for tag, rows in enumerate(pairs):
        new = []
        for row in rows:
            cx, cy = int(math.floor(row[0] / cell)), int(math.floor(row[1] / cell))
            dup = False
            for gx in (cx - 1, cx, cx + 1):
                for gy in (cy - 1, cy, cy + 1):
                    for q in table.get((gx, gy), ()):
                        if ((q[0] - row[0]) ** 2 + (q[1] - row[1]) ** 2 <= r2
                                and (q[2] - row[2]) ** 2 + (q[3] - row[3]) ** 2 <= r2):
                            dup = True
                            break
                    if dup:
                        break
                if dup:
                    break
            if not dup:
                new.append(row)
        for row in new:
            key = (int(math.floor(row[0] / cell)), int(math.floor(row[1] / cell)))
            table.setdefault(key, []).append(row)
        kept.extend(new)
    return np.array(kept).reshape(-1, 5)


def asift_baseline(img1, img2, cfg: Config = Config(), threads: int | None = None,
                   grid: ParamGrid | None = None) -> MatchResult:
    """Simulate both images over the grid (scale fixed at 1) and match all view pairs.

    Per-pair matches are merged with duplicate suppression and filtered by
    one global RANSAC.
    """
    img1, img2 = as_gray(img1), as_gray(img2)
    if grid is None:
        g = cfg.grid
        grid = build_param_grid(GridConfig(a=g.a, n=g.n, b_deg=g.b_deg, delta_s=0.0))
    t0 = time.perf_counter()
    entries = list(grid)
    views1 = _map_ordered(lambda p: _features_on(img1, p, cfg), entries, threads)
    views2 = _map_ordered(lambda p: _features_on(img2, p, cfg), entries, threads)
    t1 = time.perf_counter()

    def match_pair(ij):
        i, j = ij
        _, da, pa, _ = views1[i]
        _, db, pb, _ = views2[j]
        ms = match_ratio(da, db, cfg.ratio)
        if not ms:
            return np.zeros((0, 5))
        ia = np.array([m.idx_a for m in ms])
        ib = np.array([m.idx_b for m in ms])
        rows = np.column_stack([pa[ia], pb[ib], [m.distance for m in ms]])
        ok = _inside(rows[:, :2], img1.shape) & _inside(rows[:, 2:4], img2.shape)
        return rows[ok]

    pairs = [(i, j) for i in range(len(entries)) for j in range(len(entries))]
    per_pair = _map_ordered(match_pair, pairs, threads)
    rows = _merge(per_pair, DUPLICATE_RADIUS)
    t2 = time.perf_counter()
    out, h, kept, n, n_in = _robust_result(rows[:, :2], rows[:, 2:4], rows[:, 4], cfg, "baseline")
    t3 = time.perf_counter()
    return MatchResult(out, h, kept, n, n_in, {
        "simulate": 1000.0 * (t1 - t0),
        "match": 1000.0 * (t2 - t1),
        "ransac": 1000.0 * (t3 - t2),
        "total": 1000.0 * (t3 - t0),
    }, method="baseline-asift")
