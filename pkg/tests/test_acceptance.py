"""Acceptance suite: one printed PASS/FAIL/SKIP line per criterion.

The lines are repeated in the terminal summary. Set XAFFINE_GRAFFITI_DIR to
a directory holding the Graffiti sequence (img1..img6, H1to2p..H1to6p) to
enable the dataset criteria; everything else runs on synthetic images.
"""
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from xaffine.config import Config
from xaffine.evaluation import load_sequence, precision, run_method, tilt_case
from xaffine.pipeline import PipelineError

pytestmark = pytest.mark.slow

SQRT3, SQRT8 = math.sqrt(3.0), math.sqrt(8.0)
TILTS = (0.0, 30.0, 45.0, 60.0, 75.0, 80.0)
GRAFFITI = os.environ.get("XAFFINE_GRAFFITI_DIR")


def _timed(method, img1, img2, cfg=Config()):
    t0 = time.perf_counter()
    try:
        res = run_method(method, img1, img2, cfg)
    except PipelineError:
        res = None
    return res, time.perf_counter() - t0


def _prec(res, h, th):
    # a run that produced nothing counts as zero precision
    if res is None or res.points == 0:
        return 0.0
    return precision(res.matches, h, th)


@pytest.fixture(scope="module")
def sweep(texture):
    out = {}
    for deg in TILTS:
        img2, h = tilt_case(texture, deg)
        for method in ("proposed", "fine-only"):
            res, sec = _timed(method, texture, img2)
            out[deg, method] = (res, h, sec)
    return out


@pytest.fixture(scope="module")
def graffiti():
    if not GRAFFITI:
        return None
    return load_sequence(GRAFFITI)


def test_1_graffiti_table(graffiti, acceptance):
    tag = "1 Graffiti 1-2..1-4 precision >= 85% at sqrt3 with >= 200 matches"
    if graffiti is None:
        acceptance(tag, "SKIP", "XAFFINE_GRAFFITI_DIR not set")
        pytest.skip("Graffiti sequence not available")
    parts, ok = [], True
    for x in (2, 3, 4):
        res, sec = _timed("proposed", graffiti.images[0], graffiti.images[x - 1])
        p = _prec(res, graffiti.homographies[x], SQRT3)
        n = res.points if res else 0
        ok &= p >= 85.0 and n >= 200
        parts.append(f"1-{x}: {n} pts {p:.2f}% {sec:.1f}s")
    acceptance(tag, ok, "; ".join(parts))
    assert ok


def test_2_relative_speed(texture, sweep, graffiti, acceptance):
    tag = "2 baseline / proposed wall-clock >= 3"
    cases = []
    img2, _ = tilt_case(texture, 60.0)
    _, base_sec = _timed("baseline-asift", texture, img2)
    cases.append(("synthetic tilt 60", base_sec, sweep[60.0, "proposed"][2]))
    if graffiti is not None:
        for x in (2, 3, 4):
            a, b = graffiti.images[0], graffiti.images[x - 1]
            cases.append((f"Graffiti 1-{x}", _timed("baseline-asift", a, b)[1], _timed("proposed", a, b)[1]))
    ratios = [(name, b / p) for name, b, p in cases]
    ok = all(r >= 3.0 for _, r in ratios)
    acceptance(tag, ok, "; ".join(f"{n}: {b:.1f}s / {p:.1f}s = {b / p:.2f}x" for n, b, p in cases))
    assert ok


def test_3_threshold_relaxation(sweep, acceptance):
    tag = "3 precision sqrt8 >= sqrt3 everywhere; high tilt sqrt8 >= 95% where sqrt3 >= 85%"
    monotone = True
    high = []
    for (deg, method), (res, h, _) in sweep.items():
        if res is None or res.points == 0:
            continue
        p3, p8 = _prec(res, h, SQRT3), _prec(res, h, SQRT8)
        monotone &= p8 >= p3
        if method == "proposed" and deg >= 60.0 and p3 >= 85.0:
            high.append((deg, p3, p8))
    ok = monotone and bool(high) and all(p8 >= 95.0 for _, _, p8 in high)
    detail = f"monotone={monotone}; " + "; ".join(f"{d:.0f} deg: {p3:.1f}% -> {p8:.1f}%" for d, p3, p8 in high)
    acceptance(tag, ok, detail if high else detail + "no qualifying high-tilt case")
    assert ok


def test_4_tilt_sweep(sweep, acceptance):
    tag = "4 tilt sweep: proposed >= 85% at sqrt8 through 75 deg, fine-only < 30% at 75 deg"
    rows, ok = [], True
    for deg in TILTS:
        res, h, _ = sweep[deg, "proposed"]
        p = _prec(res, h, SQRT8)
        fres, _, _ = sweep[deg, "fine-only"]
        fp = _prec(fres, h, SQRT8)
        if deg <= 75.0:
            ok &= p >= 85.0
        rows.append(f"{deg:.0f}: {p:.1f}/{fp:.1f}")
    res75, h75, _ = sweep[75.0, "fine-only"]
    ok &= _prec(res75, h75, SQRT8) < 30.0
    acceptance(tag, ok, "proposed/fine-only % " + " ".join(rows))
    assert ok


def test_5_delta_s_ablation(texture, sweep, acceptance):
    tag = "5 delta_s ablation at 75 deg: count(0.5) >= count(0); runtime rising over 0, 0.5, 1.0"
    parts, ok = [], True
    for phi in (30.0, 100.0):
        img2, _ = tilt_case(texture, 75.0, phi_deg=phi)
        counts, secs = [], []
        for ds in (0.0, 0.5, 1.0):
            res, sec = _timed("proposed", texture, img2, Config(delta_s=ds))
            counts.append(res.coarse.best_count if res else 0)
            secs.append(sec)
        ok &= counts[1] >= counts[0] and secs[0] < secs[1] < secs[2]
        parts.append(f"phi {phi:.0f}: counts {counts} times " + "/".join(f"{s:.1f}s" for s in secs))
    acceptance(tag, ok, "; ".join(parts))
    assert ok


PROPERTY_SUITES = {
    "geometry": ("tests/test_geometry.py", "factor_product or determinant or default_counts or cos_theta"),
    "warp": ("tests/test_warp.py", "integer_coordinates_exact or constant_preserved or round_trip_mae "
                                   "or partition_of_unity"),
    "matchers": ("tests/test_orb.py tests/test_sift.py", "oracle_500 or ratio_nesting"),
    "ransac": ("tests/test_ransac.py", "recovers_with_outliers or seeded_determinism"),
    "metrics": ("tests/test_evaluation.py tests/test_pipeline.py",
                "TestPrecision or TestInlierRatio or six_match_oracle"),
}


@pytest.mark.parametrize("suite", list(PROPERTY_SUITES))
def test_6_property_suites(suite, acceptance):
    files, expr = PROPERTY_SUITES[suite]
    root = Path(__file__).resolve().parent.parent
    cmd = [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *files.split(), "-k", expr]
    r = subprocess.run(cmd, cwd=root, capture_output=True, text=True)
    last = r.stdout.strip().splitlines()[-1] if r.stdout.strip() else r.stderr.strip()[-200:]
    ok = r.returncode == 0 and "passed" in last
    acceptance(f"6 property suite {suite}", ok, last)
    assert ok, r.stdout[-3000:]
