from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlaforge.baseline import (
    PeakSet,
    disc_kernel,
    disk_filter_maxima,
    estimate_baseline,
    fit_grid_ls,
    initial_orientation,
)
from mlaforge.camera import CameraConfig
from mlaforge.grid import build_grid
from mlaforge.io import read_ground_truth
from mlaforge.synth.render import SynthesisParams, render_white_image
from mlaforge.synthetic import hex_disc_image

LYTRO_SENSOR = (7728, 5368)
D_PERSPECTIVE = 14.2857142857 * (30040.0 / 30000.0)


def _disc(shape, centres, radius=7.0):
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    img = np.zeros(shape)
    for cx, cy in centres:
        img[np.hypot(xx - cx, yy - cy) <= radius] = 1.0
    return img


def _peaks(pts):
    return PeakSet(np.asarray(pts, dtype=float), np.ones(len(pts)))


def test_disc_kernel_normalised():
    k = disc_kernel(7.0)
    assert k.sum() == pytest.approx(1.0)
    assert k.shape == (15, 15)
    assert k[7, 0] > 0 and k[0, 0] == 0
    with pytest.raises(ValueError):
        disc_kernel(0.0)


def test_single_disc_single_peak():
    peaks = disk_filter_maxima(_disc((200, 200), [(100, 100)]), 7.0, spacing=14.2857)
    assert len(peaks) == 1
    np.testing.assert_array_equal(peaks.points[0], [100, 100])


def test_two_discs_two_peaks():
    peaks = disk_filter_maxima(_disc((200, 200), [(90, 100), (105, 100)]), 7.0, spacing=15.0)
    assert len(peaks) == 2
    np.testing.assert_array_equal(sorted(peaks.points[:, 0]), [90, 105])


def test_peaks_respect_suppression_radius():
    img = hex_disc_image((300, 300), 15.0, 0.3)
    pts = disk_filter_maxima(img, 7.0, spacing=15.0).points
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    np.fill_diagonal(dist, np.inf)
    assert dist.min() >= 7.5
    assert np.all(pts == np.rint(pts))


def test_initial_orientation_of_lattice():
    _, pts = build_grid(15.0, 0.3, (0.0, 0.0), (400, 300), margin_ml=0.0)
    d, rot = initial_orientation(pts)
    assert d == pytest.approx(15.0, abs=1e-9)
    assert rot == pytest.approx(0.3, abs=1e-9)


@pytest.mark.parametrize("sensor, alpha, offset", [((400, 300), 0.1, (0.3, 0.2)),
                                                    ((1000, 800), -0.2, (1.1, -3.0)),
                                                    (LYTRO_SENSOR, 0.0, (0.0, 0.0))])
def test_exact_lattice_recovered(sensor, alpha, offset):
    _, pts = build_grid(D_PERSPECTIVE, alpha, offset, sensor, margin_ml=0.0)
    g = fit_grid_ls(_peaks(pts), sensor)
    assert g.spacing_px == pytest.approx(D_PERSPECTIVE, abs=1e-9)
    assert g.rotation_deg == pytest.approx(alpha, abs=1e-9)
    np.testing.assert_allclose(g.offset_px, offset, atol=1e-9)
    assert g.method == "baseline-dansereau"


@given(alpha=st.floats(-1, 1), ox=st.floats(-5, 5), oy=st.floats(-5, 5),
       seed=st.integers(0, 1000))
def test_fit_invariant_to_peak_order(alpha, ox, oy, seed):
    _, pts = build_grid(14.3, alpha, (ox, oy), (400, 300), margin_ml=0.0)
    perm = np.random.default_rng(seed).permutation(len(pts))
    a = fit_grid_ls(_peaks(pts), (400, 300))
    b = fit_grid_ls(_peaks(pts[perm]), (400, 300))
    assert abs(a.spacing_px - b.spacing_px) < 1e-9
    assert abs(a.rotation_deg - b.rotation_deg) < 1e-9


@pytest.mark.xfail(strict=True, reason="rounding errors average out in the least-squares fit, "
                                       "see ledger")
def test_integer_rounding_alone_violates_spacing_bound():
    _, pts = build_grid(D_PERSPECTIVE, 0.1, (0.3, -0.2), LYTRO_SENSOR, margin_ml=0.0)
    g = fit_grid_ls(_peaks(np.rint(pts)), LYTRO_SENSOR)
    assert abs(g.spacing_px - D_PERSPECTIVE) >= 0.0018


def test_too_few_peaks():
    _, pts = build_grid(15.0, 0.0, (0.0, 0.0), (100, 100), margin_ml=0.0)
    assert len(pts) < 100
    with pytest.raises(ValueError, match="100"):
        fit_grid_ls(_peaks(pts), (100, 100))


def test_index_collisions_fail():
    _, pts = build_grid(15.0, 0.0, (0.0, 0.0), (400, 300), margin_ml=0.0)
    doubled = np.vstack([pts, pts + [0.5, 0.0]])
    with pytest.raises(ValueError, match="lattice fit failed"):
        fit_grid_ls(_peaks(doubled), (400, 300))


def test_baseline_on_rendered_image():
    cfg = CameraConfig(sensor_px=(600, 500), grid_noise_px=0.0, main_focal_mm=249.0,
                       grid_rotation_deg=0.2)
    img, truth = render_white_image(cfg, SynthesisParams(rays_per_pixel=16))
    g = estimate_baseline(img.samples, expected_spacing=cfg.spacing_px)
    assert g.spacing_px == pytest.approx(truth.spacing_px, abs=0.05)
    assert g.rotation_deg == pytest.approx(0.2, abs=0.1)
    assert g.extra["disk_radius"] == 7.0


def test_baseline_guesses_spacing(small_config):
    img, truth = render_white_image(small_config, SynthesisParams(rays_per_pixel=16))
    g = estimate_baseline(img.samples)
    assert g.spacing_px == pytest.approx(truth.spacing_px, abs=0.1)


# desk corpus

def _baseline_rows(desk_results):
    rows, reports = desk_results
    by_id = {r["id"]: r for r in rows}
    return [(by_id[rep.wi_id], rep) for rep in reports
            if rep.method == "baseline-dansereau" and rep.status == "ok"]


@pytest.mark.slow
def test_peak_count_matches_lens_count(desk_results):
    for row, _ in _baseline_rows(desk_results):
        path = Path(row["img_path"]).parents[1] / "grids" / f"{row['id']}_baseline.json"
        peaks = json.loads(path.read_text())["extra"]["peaks"]
        truth = read_ground_truth(row["gt_path"])
        w, h = truth.config.sensor_px
        cp = truth.perspective_px
        n_true = int(np.sum((cp[:, 0] >= 0) & (cp[:, 0] <= w - 1) & (cp[:, 1] >= 0)
                            & (cp[:, 1] <= h - 1)))
        assert peaks == pytest.approx(n_true, rel=0.02), row["id"]


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="mild-aperture images pull the F=30 mean to 0.60 px, "
                                       "see ledger")
def test_baseline_grid_error_f30(desk_results):
    qg = [rep.Q_g for row, rep in _baseline_rows(desk_results) if float(row["F_mm"]) == 30.0]
    assert qg
    assert 0.5 * 1.285 <= float(np.mean(qg)) <= 1.5 * 1.285
    assert not math.isnan(float(np.mean(qg)))
