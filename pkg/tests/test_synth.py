from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlaforge.camera import CameraConfig, ground_truth
from mlaforge.synth.corpus import desk_sweep, generate_corpus, paper_sweep, read_manifest, Sweep
from mlaforge.synth.render import (
    SynthesisParams,
    WhiteImage,
    aperture_distance_mm,
    lens_window,
    outermost_lens,
    pack_inputs,
    render_white_image,
    solve_aperture_radius,
    trace_window,
)
from mlaforge.synth.sensor import (
    add_image_noise,
    bayer_channels,
    encode_and_quantize,
    linearize,
    mosaic_bayer,
)


# sensor effects

@pytest.mark.parametrize("v, code", [(1.0, 1023), (0.0, 0), (0.5, 775)])
def test_encode_examples(v, code):
    out = encode_and_quantize(WhiteImage(np.full((2, 2), v, dtype=np.float32)), 0.4, 10)
    assert out.samples.dtype == np.uint16
    assert np.all(out.samples == code)


@given(st.floats(0.0, 1.0))
def test_encode_linearize_round_trip(v):
    codes = encode_and_quantize(WhiteImage(np.array([[v]], dtype=np.float32))).samples
    back = float(linearize(codes, 0.4, 10)[0, 0])
    # one code step at value v spans d(v^0.4)/dv^-1 / 1023
    step = 1.0 / 1023 / (0.4 * max(v, 1e-3) ** -0.6)
    assert abs(back - v) <= step + 1e-6 or v < 1e-3


def test_noise_zero_is_identity(rng):
    img = WhiteImage(np.linspace(0, 1, 100, dtype=np.float32).reshape(10, 10))
    assert np.array_equal(add_image_noise(img, 0.0, rng).samples, img.samples)


def test_noise_std(rng):
    img = WhiteImage(np.full((1000, 1000), 0.5, dtype=np.float32))
    out = add_image_noise(img, 0.01, rng).samples
    assert out.std() == pytest.approx(0.01, rel=0.02)


def test_noise_clipping_shifts_mean_down(rng):
    img = WhiteImage(np.full((300, 300), 0.9, dtype=np.float32))
    out = add_image_noise(img, 0.5, rng).samples
    assert out.mean() < 0.9
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_noise_negative_sigma(rng):
    with pytest.raises(ValueError):
        add_image_noise(WhiteImage(np.zeros((2, 2))), -0.1, rng)


def test_noise_deterministic():
    img = WhiteImage(np.full((50, 50), 0.5, dtype=np.float32))
    a = add_image_noise(img, 0.01, np.random.default_rng(7)).samples
    b = add_image_noise(img, 0.01, np.random.default_rng(7)).samples
    assert np.array_equal(a, b)


@pytest.mark.parametrize("pattern", ["RGGB", "GRBG", "GBRG", "BGGR"])
def test_mosaic_identity_response(pattern):
    img = WhiteImage(np.random.default_rng(0).random((6, 8)).astype(np.float32))
    out = mosaic_bayer(img, pattern)
    assert np.array_equal(out.samples, img.samples)
    assert out.mosaiced and out.bayer_pattern == pattern


def test_grbg_site_tags():
    ch = bayer_channels("GRBG", (4, 4))
    # indexed [y, x]: (0,0) G, (x=1,y=0) R, (x=0,y=1) B
    assert (ch[0, 0], ch[0, 1], ch[1, 0], ch[1, 1]) == (1, 0, 2, 1)


def test_mosaic_per_site_gain():
    img = WhiteImage(np.ones((4, 4), dtype=np.float32))
    out = mosaic_bayer(img, "GRBG", np.diag([1.0, 0.8, 0.9])).samples
    assert out[0, 1] == pytest.approx(1.0)
    assert out[0, 0] == pytest.approx(0.8)
    assert out[1, 0] == pytest.approx(0.9)


def test_mosaic_twice_rejected():
    img = mosaic_bayer(WhiteImage(np.ones((2, 2), dtype=np.float32)), "RGGB")
    with pytest.raises(ValueError):
        mosaic_bayer(img, "RGGB")


# rendering

def test_axis_pixel_is_global_max_without_vignetting():
    cfg = CameraConfig(sensor_px=(61, 61), grid_noise_px=0.0, main_focal_mm=10000.0)
    img, _ = render_white_image(cfg, SynthesisParams(rays_per_pixel=128))
    v = img.samples
    assert v[30, 30] == pytest.approx(1.0)
    assert v.max() == pytest.approx(1.0)
    assert v.min() >= 0.0


@pytest.mark.parametrize("sensor", [(61, 61), (64, 48)])
def test_central_lens_centroid(sensor):
    cfg = CameraConfig(sensor_px=sensor, grid_noise_px=0.0, main_focal_mm=30.0)
    img, truth, owner = render_white_image(cfg, SynthesisParams(rays_per_pixel=256),
                                           return_owner=True)
    centre = np.array(cfg.sensor_center_px)
    lens = int(np.argmin(np.hypot(*(truth.perspective_px - centre).T)))
    yy, xx = np.mgrid[:sensor[1], :sensor[0]]
    w = np.where(owner == lens, img.samples, 0.0)
    c = np.array([(w * xx).sum(), (w * yy).sum()]) / w.sum()
    assert np.hypot(*(c - truth.perspective_px[lens])) < 0.05
    assert np.hypot(*(c - truth.orthogonal_px[lens])) < 0.05


def test_render_deterministic(small_config):
    p = SynthesisParams(rays_per_pixel=16, rng_seed=3)
    a, _ = render_white_image(small_config, p)
    b, _ = render_white_image(small_config, p)
    assert np.array_equal(a.samples, b.samples)


def test_numba_and_numpy_kernels_agree(small_config):
    truth = ground_truth(small_config)
    inputs = pack_inputs(small_config, truth)
    a, oa = trace_window(inputs, (0, 0, 60, 40), 16, 5, backend="numba")
    b, ob = trace_window(inputs, (0, 0, 60, 40), 16, 5, backend="numpy")
    assert np.array_equal(oa, ob)
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.fixture(scope="module")
def lytro_corner():
    cfg = CameraConfig(grid_noise_px=0.0)
    cfg = cfg.replace(aperture_distance_mm=aperture_distance_mm(cfg))
    truth = ground_truth(cfg)
    lens = outermost_lens(truth)
    return cfg, truth, lens


def _lens_image(cfg, truth, lens, rays=256, seed=0):
    win = lens_window(truth, lens)
    v, owner = trace_window(pack_inputs(cfg, truth), win, rays, seed)
    yy, xx = np.mgrid[win[1]:win[1] + win[3], win[0]:win[0] + win[2]]
    return np.where(owner == lens, v, 0.0), xx, yy


def _centroid(w, xx, yy):
    return np.array([(w * xx).sum(), (w * yy).sum()]) / w.sum()


def test_strong_aperture_cat_eye(lytro_corner):
    cfg, truth, lens = lytro_corner
    radius = solve_aperture_radius(cfg, 0.85, 32, truth)
    free, xx, yy = _lens_image(cfg, truth, lens)
    cut, _, _ = _lens_image(cfg.replace(aperture_radius_mm=radius), truth, lens)
    lit_free = (free > 0.01 * free.max()).sum()
    lit_cut = (cut > 0.01 * cut.max()).sum()
    # the clipped image is the overlap of two discs: much smaller than the full lens image
    assert lit_cut < 0.5 * lit_free
    assert 1 - cut.sum() / free.sum() == pytest.approx(0.85, abs=0.03)
    cp, co = truth.perspective_px[lens], truth.orthogonal_px[lens]
    toward = co - cp
    # bright region lies between c^p and c^o, on the side of the sensor centre
    iy, ix = np.unravel_index(np.argmax(cut), cut.shape)
    brightest = np.array([xx[iy, ix], yy[iy, ix]])
    t = float((brightest - cp) @ toward / (toward @ toward))
    assert 0.0 < t < 1.5
    t_c = float((_centroid(cut, xx, yy) - cp) @ toward / (toward @ toward))
    assert 0.0 < t_c <= 1.0


def test_centroid_drift_grows_off_axis(lytro_corner):
    cfg, truth, outer = lytro_corner
    radius = solve_aperture_radius(cfg, 0.5, 32, truth)
    cfg = cfg.replace(aperture_radius_mm=radius)
    r = np.hypot(*truth.centers[:, :2].T)
    r_outer = r[outer]
    drifts = []
    for frac in (0.6, 0.8, 1.0):
        cand = np.where(truth.visible)[0]
        lens = int(cand[np.argmin(np.abs(r[cand] - frac * r_outer))])
        w, xx, yy = _lens_image(cfg, truth, lens, rays=64)
        cp, co = truth.perspective_px[lens], truth.orthogonal_px[lens]
        drift = _centroid(w, xx, yy) - cp
        assert drift @ (co - cp) > 0
        drifts.append(float(np.hypot(*drift)))
    assert drifts[0] < drifts[1] < drifts[2]


def test_shrinking_aperture_never_brightens(lytro_corner):
    cfg, truth, lens = lytro_corner
    win = lens_window(truth, lens, pad=4.0)
    prev = None
    for radius in (math.inf, 40.0, 25.0, 20.0):
        v, _ = trace_window(pack_inputs(cfg.replace(aperture_radius_mm=radius), truth), win, 64, 0)
        if prev is not None:
            assert np.mean(v > prev + 1e-12) <= 1e-3
        prev = v


def test_natural_vignetting_follows_cos4(lytro_corner):
    cfg, truth, outer = lytro_corner
    inputs = pack_inputs(cfg, truth)
    r = np.hypot(*truth.centers[:, :2].T)
    cand = np.where(truth.visible)[0]
    centre = np.array(cfg.sensor_center_px)
    means, cos4 = [], []
    for target in np.linspace(0, r[outer], 25):
        lens = int(cand[np.argmin(np.abs(r[cand] - target))])
        win = lens_window(truth, lens)
        v, owner = trace_window(inputs, win, 64, 0)
        yy, xx = np.mgrid[win[1]:win[1] + win[3], win[0]:win[0] + win[2]]
        cp = truth.perspective_px[lens]
        core = (owner == lens) & (np.hypot(xx - cp[0], yy - cp[1]) < 4)
        means.append(v[core].mean())
        rho = np.hypot(*(cp - centre)) * cfg.pixel_pitch_um
        cos4.append(math.cos(math.atan(rho / (cfg.main_focal_um + cfg.ml_focal_um))) ** 4)
    r2 = np.corrcoef(means, cos4)[0, 1] ** 2
    assert r2 > 0.99


# corpus

def test_sweep_counts():
    assert len(paper_sweep().expand()) == 960
    assert len(desk_sweep().expand()) == 24
    assert len(Sweep(focal_lengths_mm=[30.0], apertures=["none"], n_variants=1,
                     noise_levels=[0.0]).expand()) == 1


def test_paper_sweep_render_groups():
    groups = {e.group for e in paper_sweep().expand()}
    assert len(groups) == 240


def test_variants_within_ranges():
    sweep = paper_sweep(seed=3)
    for v in sweep.variants():
        assert abs(v["alpha_deg"]) <= 0.3
        assert max(abs(o) for o in v["offset_um"]) <= 10.0


def test_single_entry_corpus(tmp_path):
    sweep = Sweep(focal_lengths_mm=[30.0], apertures=["none"], n_variants=1, noise_levels=[0.0],
                  rays_per_pixel=4, camera={"sensor_px": [120, 96]})
    rows = generate_corpus(sweep, tmp_path)
    assert len(rows) == 1 and rows[0]["status"] == "ok"
    back = read_manifest(tmp_path / "manifest.csv")
    assert len(back) == 1
    assert (tmp_path / back[0]["img_path"]).exists()
    assert (tmp_path / back[0]["gt_path"]).exists()
    header = (tmp_path / "manifest.csv").read_text().splitlines()[0]
    assert header.startswith("id,F_mm,aperture,alpha_deg,ox,oy,sigma_n,img_path,gt_path")


def test_corpus_deterministic(tmp_path):
    sweep = Sweep(focal_lengths_mm=[30.0], apertures=["none"], n_variants=1,
                  noise_levels=[0.005], rays_per_pixel=4, camera={"sensor_px": [80, 64]})
    generate_corpus(sweep, tmp_path / "a")
    generate_corpus(sweep, tmp_path / "b")
    a = (tmp_path / "a" / "images" / "wi0000.pgm").read_bytes()
    b = (tmp_path / "b" / "images" / "wi0000.pgm").read_bytes()
    assert a == b


def test_corpus_unwritable_entry_marked_failed(tmp_path):
    sweep = Sweep(focal_lengths_mm=[30.0], apertures=["none"], n_variants=1, noise_levels=[0.0],
                  rays_per_pixel=4, camera={"sensor_px": [80, 64]})
    (tmp_path / "images").mkdir()
    (tmp_path / "images" / "wi0000.pgm").mkdir()  # a directory blocks the image file
    rows = generate_corpus(sweep, tmp_path)
    assert rows[0]["status"] == "failed"
