"""Ground-truth scoring, dataset loading and synthetic benchmark cases."""
from __future__ import annotations

import csv
import io
import json
import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .geometry import AffineParams, map_points, simulation_matrix
from .imgio import as_gray, read_image, write_image
from .pipeline import asift_baseline, fine_only, match_images
from .warp import antialias_tilt, warp_lanczos

__all__ = [
    "Sequence",
    "EvalRow",
    "EvalReport",
    "load_sequence",
    "write_sequence",
    "parse_homography",
    "precision",
    "inlier_ratio",
    "synth_warp_case",
    "tilt_case",
    "run_method",
    "run_benchmark",
    "METHODS",
]

METHODS = ("proposed", "baseline-asift", "fine-only")
IMAGE_SUFFIXES = (".pgm", ".ppm", ".png", ".pnm", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")
_IMG_RE = re.compile(r"^img(\d+)$", re.IGNORECASE)


@dataclass
class Sequence:
    name: str
    images: list
    # X -> 3x3 homography from image 1 to image X
    homographies: dict = field(default_factory=dict)

    def pairs(self):
        return [(1, x) for x in range(2, len(self.images) + 1)]


def parse_homography(text: str, source: str = "<string>") -> np.ndarray:
    """Nine whitespace-separated reals, row-major. Errors cite the line number."""
    values = []
    last_line = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        for tok in line.split():
            try:
                v = float(tok)
            except ValueError:
                raise ValueError(f"{source}: line {lineno}: not a number: {tok!r}") from None
            if len(values) == 9:
                raise ValueError(f"{source}: line {lineno}: more than 9 values")
            values.append(v)
            last_line = lineno
    if len(values) != 9:
        raise ValueError(f"{source}: line {max(last_line, 1)}: expected 9 values, found {len(values)}")
    h = np.array(values).reshape(3, 3)
    if not np.all(np.isfinite(h)) or abs(np.linalg.det(h)) < 1e-12:
        raise ValueError(f"{source}: line {last_line}: homography is not invertible")
    return h


def load_sequence(directory, name: str | None = None) -> Sequence:
    """Read ``img1 .. imgK`` and the optional ``H1toXp`` files of a directory."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    found = {}
    for path in sorted(d.iterdir()):
        m = _IMG_RE.match(path.stem)
        if m and path.suffix.lower() in IMAGE_SUFFIXES:
            idx = int(m.group(1))
            found.setdefault(idx, path)
    if not found:
        raise FileNotFoundError(f"no img1..imgK files in {d}")
    k = max(found)
    missing = [i for i in range(1, k + 1) if i not in found]
    if missing:
        raise FileNotFoundError(f"{d}: missing image(s) {', '.join(f'img{i}' for i in missing)}")
    images = [read_image(found[i]) for i in range(1, k + 1)]
    homs = {}
    for x in range(2, k + 1):
        hp = d / f"H1to{x}p"
        if hp.exists():
            homs[x] = parse_homography(hp.read_text(), str(hp))
    return Sequence(name or d.name, images, homs)


def write_sequence(directory, images, homographies=None, suffix: str = ".png") -> Path:
    """Write images as ``img1..imgK`` and homographies as ``H1toXp`` text files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images, 1):
        write_image(d / f"img{i}{suffix}", img)
    for x, h in (homographies or {}).items():
        h = np.asarray(h, dtype=float)
        lines = [" ".join(f"{v:.17g}" for v in row) for row in h]
        (d / f"H1to{x}p").write_text("\n".join(lines) + "\n")
    return d


# ---------------------------------------------------------------- metrics

def precision(matches, h_true, th: float = math.sqrt(3.0)) -> float:
    """Percentage of matches whose image-1 point, projected by ``h_true``, lands within ``th``.

    ``matches`` is an ``(N, >=4)`` array of ``x1, y1, x2, y2``.
    """
    m = np.asarray(matches, dtype=float)
    if m.size == 0:
        raise ValueError("undefined precision: no matches")
    m = m.reshape(len(m), -1)
    proj = map_points(np.asarray(h_true, dtype=float), m[:, :2])
    err = np.hypot(proj[:, 0] - m[:, 2], proj[:, 1] - m[:, 3])
    return 100.0 * np.count_nonzero(err <= th) / len(m)


def inlier_ratio(pt_num: int, in_num: int) -> float:
    if pt_num <= 0:
        raise ValueError("inlier ratio undefined for zero points")
    if not 0 <= in_num <= pt_num:
        raise ValueError(f"in_num must lie in [0, {pt_num}], got {in_num}")
    return 100.0 * in_num / pt_num


# ---------------------------------------------------------------- synthetic cases

def _antialias_for(img, lin):
    """Blur ``img`` ahead of the compression that the 2x2 map ``lin`` applies."""
    _, sv, vt = np.linalg.svd(lin)
    if sv[-1] >= 1.0:
        return img
    v = vt[-1]
    # the blur direction of antialias_tilt is (cos phi, -sin phi)
    phi = math.atan2(-v[1], v[0])
    return antialias_tilt(img, 1.0 / sv[-1], phi)


def synth_warp_case(img, h, seed: int = 0, noise: float = 0.0):
    """Render ``img`` under ``h`` and return ``(warped, exact_homography)``.

    The homography includes the framing offset of the warp, so it maps
    ``img`` pixel centres onto the returned image exactly. Compressed
    directions are low-pass filtered first. ``noise`` adds Gaussian noise
    of that standard deviation, drawn from ``seed``.
    """
    img = as_gray(img)
    h = np.asarray(h, dtype=float)
    if h.shape != (3, 3) or abs(np.linalg.det(h)) < 1e-12:
        raise ValueError("degenerate homography")
    h = h / h[2, 2]
    if np.allclose(h, np.eye(3), atol=0, rtol=0):
        out = img.copy()
        forward = np.eye(3)
    else:
        # local linear part at the image centre drives the pre-filter
        cy, cx = (np.array(img.shape) - 1) / 2.0
        w = h[2, 0] * cx + h[2, 1] * cy + h[2, 2]
        p = map_points(h, np.array([[cx, cy]]))[0]
        jac = (h[:2, :2] - np.outer(p, h[2, :2])) / w
        src = _antialias_for(img, jac)
        half = np.array([[1, 0, 0.5], [0, 1, 0.5], [0, 0, 1.0]])
        half_inv = np.array([[1, 0, -0.5], [0, 1, -0.5], [0, 0, 1.0]])
        res = warp_lanczos(src, half @ h @ half_inv)
        out = res.image
        forward = res.forward
    if noise > 0:
        rng = np.random.default_rng(seed)
        out = np.clip(out + rng.normal(0.0, noise, out.shape), 0.0, 255.0)
    return out, forward / forward[2, 2]


def tilt_case(img, tilt_deg: float, phi_deg: float = 30.0, seed: int = 0):
    """Frontal image against an oblique view at absolute tilt ``tilt_deg``."""
    t = 1.0 / math.cos(math.radians(tilt_deg))
    h = simulation_matrix(AffineParams(tilt=t, phi=math.radians(phi_deg)))
    return synth_warp_case(img, h, seed)


# ---------------------------------------------------------------- benchmark

@dataclass
class EvalRow:
    sequence: str
    pair: str
    method: str
    points: int | None = None
    precision_pct: float | None = None
    inlier_ratio_pct: float | None = None
    time_ms: float | None = None
    note: str = ""

    def as_dict(self):
        return {
            "sequence": self.sequence,
            "pair": self.pair,
            "method": self.method,
            "points": self.points,
            "precision_pct": self.precision_pct,
            "inlier_ratio_pct": self.inlier_ratio_pct,
            "time_ms": self.time_ms,
            "note": self.note,
        }


CSV_COLUMNS = ("sequence", "pair", "method", "points", "precision_pct", "inlier_ratio_pct", "time_ms", "note")


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    th: float = math.sqrt(3.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for r in self.rows:
            d = r.as_dict()
            wr.writerow(["" if d[c] is None else _fmt(d[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"th": self.th, "rows": [r.as_dict() for r in self.rows]}, indent=2)

    def summary(self) -> str:
        """Plain-text table: one line per pair and method."""
        lines = [f"{'pair':<6} {'method':<15} {'points':>7} {'precision%':>11} {'inliers%':>9} {'time_ms':>10}"]
        for r in self.rows:
            def cell(v, spec):
                return format(v, spec) if v is not None else "-"
            lines.append(
                f"{r.pair:<6} {r.method:<15} {cell(r.points, 'd'):>7} {cell(r.precision_pct, '.2f'):>11} "
                f"{cell(r.inlier_ratio_pct, '.2f'):>9} {cell(r.time_ms, '.0f'):>10}"
                + (f"  [{r.note}]" if r.note else ""))
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def run_method(method: str, img1, img2, cfg: Config = Config(), threads=None):
    if method == "proposed":
        return match_images(img1, img2, cfg, threads)
    if method == "baseline-asift":
        return asift_baseline(img1, img2, cfg, threads)
    if method == "fine-only":
        return fine_only(img1, img2, cfg)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def run_benchmark(seq: Sequence, methods=("proposed",), cfg: Config = Config(), threads=None,
                  pairs=None, on_result=None) -> EvalReport:
    """Score every ``(1, X)`` pair with every method.

    Timing covers feature extraction and matching, not file I/O. A failing
    pair yields a row with a note instead of aborting the run.
    ``on_result(row, result)`` is called after each successful run.
    """
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    report = EvalReport(th=cfg.th)
    for a, b in pairs or seq.pairs():
        for method in methods:
            row = EvalRow(seq.name, f"{a}-{b}", method)
            t0 = time.perf_counter()
            try:
                res = run_method(method, seq.images[a - 1], seq.images[b - 1], cfg, threads)
            except Exception as exc:  # batch semantics: record and continue
                row.time_ms = 1000.0 * (time.perf_counter() - t0)
                row.note = f"error: {exc}"
                report.rows.append(row)
                continue
            row.time_ms = 1000.0 * (time.perf_counter() - t0)
            row.points = res.points
            row.inlier_ratio_pct = res.inlier_ratio
            h = seq.homographies.get(b) if a == 1 else None
            if h is not None and res.points:
                row.precision_pct = precision(res.matches, h, cfg.th)
            elif h is None:
                row.note = "no ground truth"
            report.rows.append(row)
            if on_result is not None:
                on_result(row, res)
    return report
