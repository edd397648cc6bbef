import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from xaffine.cli import main
from xaffine.config import Config, ConfigError, load_config, parse_threshold
from xaffine.evaluation import tilt_case, write_sequence
from xaffine.geometry import build_param_grid
from xaffine.imgio import write_image


class TestConfig:
    def test_defaults(self):
        c = Config()
        assert (c.a, c.n, c.b_deg, c.delta_s) == (math.sqrt(2), 5, 72.0, 0.5)
        assert (c.max_points_coarse, c.max_points_fine, c.ratio, c.lanczos_a) == (1000, 1000, 0.75, 4)
        assert (c.ransac_threshold, c.ransac_max_iters, c.ransac_confidence, c.seed) == (3.0, 2000, 0.995, 42)
        assert c.th == math.sqrt(3) and c.final_ransac_filter is True
        assert len(build_param_grid(c.grid)) == 43

    @pytest.mark.parametrize("text,want", [("sqrt3", math.sqrt(3)), ("sqrt8", math.sqrt(8)),
                                           ("√8", math.sqrt(8)), ("sqrt(2)", math.sqrt(2)), ("2.5", 2.5)])
    def test_threshold_names(self, text, want):
        assert parse_threshold(text) == want

    def test_file_then_overrides(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("# comment\nratio = 0.8\nseed=7  # trailing\n\nfinal_ransac_filter = off\nth = sqrt8\n")
        c = load_config(f, seed="9")
        assert c.ratio == 0.8 and c.seed == 9 and c.final_ransac_filter is False
        assert c.th == math.sqrt(8)

    def test_bad_line_number(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("ratio = 0.8\nnonsense\n")
        with pytest.raises(ConfigError, match=":2:"):
            load_config(f)

    @pytest.mark.parametrize("kw", [dict(bogus=1), dict(ratio="1.5"), dict(n="2.5"),
                                    dict(final_ransac_filter="maybe"), dict(delta_s=-1)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            Config().with_values(**kw)


@pytest.fixture(scope="module")
def pair_files(tmp_path_factory):
    from xaffine.synthetic import textured_image
    d = tmp_path_factory.mktemp("pair")
    img = textured_image(256, seed=7)
    write_image(d / "a.png", img)
    return d, d / "a.png"


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    from xaffine.synthetic import textured_image
    img = textured_image(256, seed=7)
    warped, h = tilt_case(img, 40.0)
    d = tmp_path_factory.mktemp("seq")
    write_sequence(d, [img, warped], {2: h})
    return d


class TestCli:
    def test_match_same_file(self, pair_files, tmp_path, capsys):
        _, a = pair_files
        out = tmp_path / "o"
        assert main(["match", str(a), str(a), "--out", str(out), "--viz"]) == 0
        line = capsys.readouterr().out.strip()
        assert line.startswith("points=") and " inliers=" in line and " time_ms=" in line
        doc = json.loads((out / "result.json").read_text())
        h = np.array(doc["homography"]).reshape(3, 3)
        assert np.abs(h - np.eye(3)).max() < 1e-3
        assert doc["config"]["seed"] == 42
        viz = np.asarray(Image.open(out / "viz_1-2.png"))
        assert viz.shape == (256, 512, 3)
        green = (viz[..., 1] == 200) & (viz[..., 0] == 0)
        assert green.any()

    def test_missing_file(self, tmp_path, capsys):
        missing = tmp_path / "nope.png"
        assert main(["match", str(missing), str(missing), "--out", str(tmp_path)]) != 0
        assert str(missing) in capsys.readouterr().err

    def test_pipeline_error_exit(self, tmp_path, capsys):
        flat = tmp_path / "flat.png"
        write_image(flat, np.full((128, 128), 90.0))
        assert main(["match", str(flat), str(flat), "--out", str(tmp_path), "--method", "fine-only"]) == 1
        assert "fine" in capsys.readouterr().err

    def test_global_flags_either_side(self, pair_files, tmp_path):
        _, a = pair_files
        assert main(["--seed", "5", "--out", str(tmp_path / "x"), "match", str(a), str(a),
                     "--method", "fine-only"]) == 0
        assert json.loads((tmp_path / "x" / "result.json").read_text())["config"]["seed"] == 5

    def test_eval_reports(self, dataset, tmp_path, capsys):
        out = tmp_path / "ev"
        assert main(["eval", str(dataset), "--method", "fine-only", "--th", "sqrt8", "--out", str(out)]) == 0
        summary = capsys.readouterr().out
        assert "precision%" in summary and "fine-only" in summary
        rows = list(csv.DictReader((out / "report.csv").open()))
        assert len(rows) == 1 and rows[0]["pair"] == "1-2" and float(rows[0]["precision_pct"]) > 90
        assert json.loads((out / "report.json").read_text())["th"] == math.sqrt(8)

    def test_eval_without_h(self, dataset, tmp_path):
        d = tmp_path / "noh"
        d.mkdir()
        for p in dataset.glob("img*"):
            (d / p.name).write_bytes(p.read_bytes())
        assert main(["eval", str(d), "--method", "fine-only", "--out", str(tmp_path)]) == 0
        (row,) = csv.DictReader((tmp_path / "report.csv").open())
        assert row["precision_pct"] == "" and float(row["inlier_ratio_pct"]) > 0
        assert row["note"] == "no ground truth"

    def test_eval_partial_failure_exits_zero(self, dataset, tmp_path):
        d = tmp_path / "bad"
        d.mkdir()
        (d / "img1.png").write_bytes((dataset / "img1.png").read_bytes())
        write_image(d / "img2.png", np.full((128, 128), 3.0))
        assert main(["eval", str(d), "--method", "fine-only", "--out", str(tmp_path)]) == 0
        (row,) = csv.DictReader((tmp_path / "report.csv").open())
        assert row["note"].startswith("error:")

    def test_eval_missing_dir(self, tmp_path):
        assert main(["eval", str(tmp_path / "none"), "--out", str(tmp_path)]) != 0

    def test_sweep(self, dataset, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep", str(dataset), "--param", "max_points", "--values", "300,600",
                     "--method", "fine-only", "--out", str(out)]) == 0
        rows = list(csv.DictReader((out / "sweep.csv").open()))
        assert [r["value"] for r in rows] == ["300", "600"]
        assert all(float(r["time_ms"]) > 0 for r in rows)

    def test_sweep_unknown_param(self, dataset, tmp_path, capsys):
        assert main(["sweep", str(dataset), "--param", "sigma", "--values", "1", "--out", str(tmp_path)]) == 2
        err = capsys.readouterr().err
        assert "max_points" in err and "delta_s" in err

    def test_sweep_empty_values(self, dataset, tmp_path):
        assert main(["sweep", str(dataset), "--param", "delta_s", "--values", "", "--out", str(tmp_path)]) != 0

    def test_bad_set(self, pair_files, tmp_path):
        _, a = pair_files
        assert main(["match", str(a), str(a), "--set", "ratio", "--out", str(tmp_path)]) == 2
        assert main(["match", str(a), str(a), "--set", "colour=red", "--out", str(tmp_path)]) == 2

    def test_byte_identical_reruns(self, dataset, tmp_path):
        outs = []
        for k in range(2):
            o = tmp_path / f"run{k}"
            assert main(["eval", str(dataset), "--method", "fine-only", "--omit-timings", "--out", str(o)]) == 0
            assert main(["match", str(dataset / "img1.png"), str(dataset / "img2.png"),
                         "--omit-timings", "--out", str(o)]) == 0
            outs.append(o)
        for name in ("report.csv", "report.json", "result.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name

    def test_module_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "xaffine", "--version"], capture_output=True, text=True)
        assert r.returncode == 0 and r.stdout.startswith("xaffine ")
