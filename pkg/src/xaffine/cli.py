"""``xaffine`` command line: ``match``, ``eval`` and ``sweep``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import __version__
from .config import Config, ConfigError, load_config, parse_threshold
from .evaluation import METHODS, load_sequence, run_benchmark, run_method
from .imgio import quantize, read_image
from .pipeline import PipelineError

SWEEP_PARAMS = ("max_points", "delta_s")


def _add_globals(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="flat key = value config file")
    p.add_argument("--seed", type=int, default=d, help="RANSAC seed")
    p.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS if suppress else ".",
                   help="output directory (default: current directory)")
    p.add_argument("--viz", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="write side-by-side match images")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=argparse.SUPPRESS if suppress else [],
                   help="override a config key (repeatable)")
    p.add_argument("--omit-timings", action="store_true",
                   default=argparse.SUPPRESS if suppress else False,
                   help="leave wall-clock fields out of written files so reruns are byte-identical")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xaffine",
        description="Feature matching under large viewpoint changes by single-image affine simulation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("match", help="match two images")
    m.add_argument("img1")
    m.add_argument("img2")
    m.add_argument("--method", choices=METHODS, default="proposed")
    _add_globals(m, suppress=True)

    e = sub.add_parser("eval", help="evaluate a dataset directory (img1..imgK, H1toXp)")
    e.add_argument("dataset_dir")
    e.add_argument("--method", action="append", choices=METHODS,
                   help="method to run (repeatable; default proposed)")
    e.add_argument("--th", help="correctness threshold in pixels, e.g. sqrt3, sqrt8, 2.5")
    _add_globals(e, suppress=True)

    s = sub.add_parser("sweep", help="re-run an evaluation over values of one parameter")
    s.add_argument("dataset_dir")
    s.add_argument("--param", required=True, help=f"one of: {', '.join(SWEEP_PARAMS)}")
    s.add_argument("--values", required=True, help="comma-separated list of values")
    s.add_argument("--method", choices=METHODS, default="proposed")
    s.add_argument("--th", help="correctness threshold in pixels")
    _add_globals(s, suppress=True)
    return parser


def _config(args) -> Config:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "th", None):
        overrides["th"] = parse_threshold(args.th)
    return load_config(args.config, **overrides)


def _draw_matches(img1, img2, matches, inliers, path):
    a, b = quantize(img1), quantize(img2)
    h = max(a.shape[0], b.shape[0])
    canvas = np.zeros((h, a.shape[1] + b.shape[1]), np.uint8)
    canvas[:a.shape[0], :a.shape[1]] = a
    canvas[:b.shape[0], a.shape[1]:] = b
    im = Image.fromarray(canvas).convert("RGB")
    draw = ImageDraw.Draw(im)
    good = set(int(i) for i in inliers)
    off = a.shape[1]
    for i, (x1, y1, x2, y2, _) in enumerate(matches):
        color = (0, 200, 0) if i in good else (220, 0, 0)
        draw.line([(x1, y1), (x2 + off, y2)], fill=color, width=1)
    im.save(path)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_match(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    img1 = read_image(args.img1)
    img2 = read_image(args.img2)
    t0 = time.perf_counter()
    res = run_method(args.method, img1, img2, cfg)
    elapsed = 1000.0 * (time.perf_counter() - t0)
    doc = res.to_dict()
    doc["config"] = cfg.as_dict()
    if args.omit_timings:
        doc.pop("timings_ms", None)
    _write(out / "result.json", json.dumps(doc, indent=1) + "\n")
    if args.viz:
        _draw_matches(img1, img2, res.matches, res.inliers, out / "viz_1-2.png")
    print(f"points={res.points} inliers={res.n_inliers} time_ms={elapsed:.0f}")
    return 0


def _strip_times(report):
    for row in report.rows:
        row.time_ms = None
    return report


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    seq = load_sequence(args.dataset_dir)
    methods = args.method or ["proposed"]
    on_result = None
    if args.viz:
        out.mkdir(parents=True, exist_ok=True)

        def on_result(row, res):
            a, b = (int(v) for v in row.pair.split("-"))
            name = f"viz_{row.pair}.png" if len(methods) == 1 else f"viz_{row.pair}_{row.method}.png"
            _draw_matches(seq.images[a - 1], seq.images[b - 1], res.matches, res.inliers, out / name)

    report = run_benchmark(seq, methods, cfg, on_result=on_result)
    print(report.summary())
    if args.omit_timings:
        _strip_times(report)
    _write(out / "report.csv", report.to_csv())
    _write(out / "report.json", report.to_json() + "\n")
    return 0


def _parse_values(param, text):
    items = [v.strip() for v in (text or "").split(",") if v.strip()]
    if not items:
        raise ConfigError("--values must list at least one value")
    if param == "max_points":
        vals = []
        for v in items:
            f = float(v)
            if f != int(f) or f < 1:
                raise ConfigError(f"max_points values must be positive integers, got {v!r}")
            vals.append(int(f))
        return vals
    return [float(v) for v in items]


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        print(f"error: unknown sweep parameter {args.param!r}; supported: {', '.join(SWEEP_PARAMS)}",
              file=sys.stderr)
        return 2
    values = _parse_values(args.param, args.values)
    base = _config(args)
    out = Path(args.out)
    seq = load_sequence(args.dataset_dir)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["param", "value", "pair", "method", "points", "precision_pct", "time_ms"])
    for v in values:
        if args.param == "max_points":
            cfg = base.with_values(max_points_coarse=v, max_points_fine=v)
        else:
            cfg = base.with_values(delta_s=v)
        report = run_benchmark(seq, [args.method], cfg)
        for row in report.rows:
            t = "" if args.omit_timings or row.time_ms is None else f"{row.time_ms:.1f}"
            p = "" if row.precision_pct is None else f"{row.precision_pct:.4f}"
            pts = "" if row.points is None else row.points
            wr.writerow([args.param, v, row.pair, row.method, pts, p, t])
            print(f"{args.param}={v} pair={row.pair} points={pts or '-'} precision={p or '-'} time_ms={t or '-'}")
    _write(out / "sweep.csv", buf.getvalue())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"match": cmd_match, "eval": cmd_eval, "sweep": cmd_sweep}
    try:
        return handlers[args.command](args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
