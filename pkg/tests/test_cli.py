from __future__ import annotations

import csv
import json
import time

import numpy as np
import pytest
import yaml

from mlaforge.cli import main
from mlaforge.io import read_raster, write_pgm

SMALL = {
    "camera": {"sensor_px": [320, 256], "main_focal_mm": 30.0},
    "sweep": {"focal_lengths_mm": [30.0], "apertures": ["mild"], "n_variants": 1,
              "noise_levels": [0.0], "rays_per_pixel": 8, "with_scene": True},
    "estimate": {"hyperparams": {"window_sigma": 60.0, "gamma": 0.1, "stretch_low": 0.1}},
}


def _write_config(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _write_config(root / "small.yaml", SMALL)
    assert main(["synth", "--config", cfg, "--out", str(root / "corpus")]) == 0
    with open(root / "corpus" / "manifest.csv") as fh:
        row = next(csv.DictReader(fh))
    return root, cfg, row


# bounds

def test_bounds_lytro_printed_values(capsys):
    t0 = time.perf_counter()
    code, out, _ = _run(capsys, "bounds")
    assert time.perf_counter() - t0 < 1.0
    assert code == 0
    printed = json.loads(out)["printed"]
    assert printed["delta_f_um"] == "2.8"
    assert printed["delta_tilt_deg"] == "0.0088"
    assert printed["spacing_bound_px"] == "0.0018"
    assert printed["rotation_bound_deg"] == "0.0074"


def test_bounds_doubled_diameter_halves_delta_f(capsys, tmp_path):
    cfg = _write_config(tmp_path / "c.yaml", {"camera": {"ml_diameter_um": 40.0}})
    code, out, _ = _run(capsys, "bounds", "--config", cfg)
    assert code == 0
    base = json.loads(_run(capsys, "bounds")[1])["bounds"]["delta_f_um"]
    assert json.loads(out)["bounds"]["delta_f_um"] == pytest.approx(base / 2)


def test_bounds_writes_json_and_run_manifest(capsys, tmp_path):
    out = tmp_path / "bounds.json"
    assert _run(capsys, "bounds", "--out", out)[0] == 0
    assert json.loads(out.read_text())["printed"]["delta_f_um"] == "2.8"
    run = json.loads((tmp_path / "bounds.json.run.json").read_text())
    assert run["command"] == "bounds" and run["seed"] == 0 and len(run["config_hash"]) == 16


@pytest.mark.parametrize("content", ["camera: [unclosed\n", "camera:\n  ml_diameter_um: 0\n",
                                     "camera:\n  nonsense: 1\n"])
def test_bounds_bad_config_exits_2(capsys, tmp_path, content):
    path = tmp_path / "bad.yaml"
    path.write_text(content)
    code, _, err = _run(capsys, "bounds", "--config", path)
    assert code == 2
    assert "mlaforge bounds" in err


def test_missing_config_exits_2(capsys, tmp_path):
    assert _run(capsys, "bounds", "--config", tmp_path / "nope.yaml")[0] == 2


def test_no_command_exits_2(capsys):
    assert _run(capsys)[0] == 2


def test_dump_defaults(capsys):
    code, out, _ = _run(capsys, "--dump-defaults")
    assert code == 0
    assert yaml.safe_load(out)["camera"]["main_focal_mm"] == 30.0


def test_bounds_deterministic(capsys):
    assert _run(capsys, "bounds")[1] == _run(capsys, "bounds")[1]


# synth

def test_synth_plan_paper_sweep(capsys, tmp_path):
    code, out, _ = _run(capsys, "synth", "--preset", "paper", "--plan-only", "--out", tmp_path)
    assert code == 0
    with open(tmp_path / "manifest.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 960


def test_synth_unwritable_exits_3(capsys, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = _write_config(tmp_path / "c.yaml", SMALL)
    assert _run(capsys, "synth", "--config", cfg, "--out", blocker / "corpus")[0] == 3


def test_synth_single_entry(small_corpus):
    root, _, row = small_corpus
    assert row["status"] == "ok"
    img, maxval = read_raster(row["img_path"] if row["img_path"].startswith("/")
                              else root / "corpus" / row["img_path"])
    assert img.shape == (256, 320) and maxval == 1023
    assert (root / "corpus" / "run.json").exists()


# estimate

def _image(root, row, key="img_path"):
    p = row[key]
    return p if p.startswith("/") else str(root / "corpus" / p)


@pytest.mark.parametrize("method", ["proposed", "baseline"])
def test_estimate_writes_grid(capsys, small_corpus, method):
    root, cfg, row = small_corpus
    out = root / f"grid_{method}.json"
    code, stdout, err = _run(capsys, "estimate", _image(root, row), "--method", method,
                             "--config", cfg, "--out", out)
    assert code == 0, err
    grid = json.loads(out.read_text())
    assert grid["method"] == ("proposed" if method == "proposed" else "baseline-dansereau")
    assert grid["spacing_px"] == pytest.approx(14.3, abs=0.1)
    assert json.loads(stdout)["method"] == grid["method"]


def test_estimate_deterministic(capsys, small_corpus):
    root, cfg, row = small_corpus
    grids = []
    for k in range(2):
        out = root / f"det{k}.json"
        assert _run(capsys, "estimate", _image(root, row), "--config", cfg, "--out", out)[0] == 0
        g = json.loads(out.read_text())
        g.pop("runtime_s")
        g.get("extra", {}).pop("fourier_runtime_s", None)
        grids.append(g)
    assert grids[0] == grids[1]


def test_estimate_missing_file_exits_3(capsys, tmp_path):
    code, _, err = _run(capsys, "estimate", tmp_path / "nope.pgm", "--out", tmp_path / "g.json")
    assert code == 3
    assert "no such image" in err


def test_estimate_corrupt_image_exits_4(capsys, tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n10 10\n1023\n\x00\x01")
    assert _run(capsys, "estimate", bad, "--out", tmp_path / "g.json")[0] == 4


def test_estimate_featureless_image_exits_4(capsys, tmp_path):
    flat = tmp_path / "flat.pgm"
    write_pgm(flat, np.full((128, 160), 500, dtype=np.uint16), 1023)
    assert _run(capsys, "estimate", flat, "--out", tmp_path / "g.json")[0] == 4


# evaluate

def test_evaluate_empty_manifest_exits_2(capsys, tmp_path):
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("id,F_mm,aperture,alpha_deg,ox,oy,sigma_n,img_path,gt_path,status\n")
    assert _run(capsys, "evaluate", manifest, "--out", tmp_path / "res")[0] == 2


def test_evaluate_single_image(capsys, small_corpus):
    root, cfg, _ = small_corpus
    out = root / "eval"
    code, stdout, err = _run(capsys, "evaluate", root / "corpus" / "manifest.csv", "--config", cfg,
                             "--method", "proposed", "--out", out)
    assert code == 0, err
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["method"] == "proposed"
    corr = json.loads((out / "correlations.json").read_text())
    assert all(v is None for v in corr["proposed"].values())
    assert "| 30 |" in stdout
    assert (out / "grids" / "wi0000_proposed.json").exists()


# decode

def test_decode_white_by_itself_is_flat(capsys, small_corpus):
    root, cfg, row = small_corpus
    white = _image(root, row)
    grid = root / "grid_proposed.json"
    if not grid.exists():
        assert _run(capsys, "estimate", white, "--config", cfg, "--out", grid)[0] == 0
    out = root / "lf_white"
    code, stdout, err = _run(capsys, "decode", white, white, "--grid", grid, "--config", cfg,
                             "--out", out)
    assert code == 0, err
    manifest = json.loads((out / "manifest.json").read_text())
    centre = manifest["dims"]["u"] // 2
    img, _ = read_raster(out / f"u{centre:02d}_v{centre:02d}.png")
    mask = np.load(out / "mask.npz")["mask"][centre, centre].T
    v = img[~mask].astype(float)
    assert v.std() / v.mean() < 0.02


def test_decode_scene_reports_ghosting(capsys, small_corpus):
    root, cfg, row = small_corpus
    code, stdout, err = _run(capsys, "decode", _image(root, row, "scene_path"), _image(root, row),
                             "--config", cfg, "--ghosting", "--out", root / "lf_scene")
    assert code == 0, err
    assert json.loads(stdout)["ghosting"] >= 0.0


def test_decode_size_mismatch_exits_5(capsys, small_corpus, tmp_path):
    root, cfg, row = small_corpus
    white = _image(root, row)
    other = tmp_path / "other.pgm"
    write_pgm(other, np.full((200, 300), 800, dtype=np.uint16), 1023)
    grid = tmp_path / "grid.json"
    assert _run(capsys, "estimate", white, "--config", cfg, "--out", grid)[0] == 0
    code, _, err = _run(capsys, "decode", other, other, "--grid", grid, "--config", cfg,
                        "--out", tmp_path / "lf")
    assert code == 5
    assert "does not match" in err
