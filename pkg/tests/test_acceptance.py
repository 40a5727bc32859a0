"""Acceptance suite: one PASS/FAIL line per criterion.

Criteria 2, 3, 5 and the ghosting part of 7 run on the cached desk corpus
(see ``tests/desk.py``), so they carry the ``slow`` marker.
"""

from __future__ import annotations

import math
import statistics
import time

import numpy as np
import pytest

from mlaforge.camera import CameraConfig, accuracy_bounds
from mlaforge.cli import _printed_bounds
from mlaforge.decode import DecodeOptions, decode, hex_to_rect
from mlaforge.decode.demosaic import demosaic_malvar
from mlaforge.fourier import Hyperparams, estimate_spacing_rotation, freq_to_spatial
from mlaforge.grid import build_grid
from mlaforge.metrics import corpus_stats, q_g_ideal_expectation, q_g_points
from mlaforge.synthetic import hex_disc_image
from test_decode import _oracle as malvar_oracle
from test_decode import decoded_white  # noqa: F401 (fixture)

LYTRO_F30 = CameraConfig(grid_noise_px=0.0)
SIGMA_G = 0.0143


@pytest.fixture
def verdict(capsys):
    """Print a PASS/FAIL line that survives output capture, then assert."""

    def _verdict(criterion: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
        assert ok, detail

    return _verdict


def _ok(desk_results, method):
    rows, reports = desk_results
    by_id = {r["id"]: r for r in rows}
    return [(by_id[r.wi_id], r) for r in reports if r.method == method and r.status == "ok"]


# 1. bounds

def test_criterion_1_bounds(verdict):
    t0 = time.perf_counter()
    b = accuracy_bounds(LYTRO_F30)
    dt = time.perf_counter() - t0
    p = _printed_bounds(b)
    got = (p["delta_f_um"], p["delta_tilt_deg"], p["spacing_bound_px"], p["rotation_bound_deg"])
    tilt_ok = abs(b.delta_tilt_deg - 0.0088) <= 0.0001
    ok = got[0] == "2.8" and tilt_ok and got[2:] == ("0.0018", "0.0074") and dt < 1.0
    verdict("1 (delta_f, delta_tilt, spacing, rotation bounds)", ok,
            f"printed {got}, runtime {dt:.3f} s")


@pytest.mark.xfail(strict=True, reason="the local-spacing formula gives 0.0010 px at F=30 mm, "
                                       "see ledger")
def test_criterion_1_delta_d_max(verdict):
    b = accuracy_bounds(LYTRO_F30)
    printed = _printed_bounds(b)["delta_d_max_px"]
    verdict("1 (delta_d_max)", max(printed) == "0.0022", f"printed {printed}, expected 0.0022")


# 2. requirement satisfaction

BASELINE = "baseline-dansereau"
MILD_APERTURE = ("at the mild aperture (50 % of the outer lens blocked) the baseline's spacing "
                 "bias stays under the bound, see ledger")


@pytest.mark.slow
def test_criterion_2_proposed_meets_requirements(desk_results, verdict):
    prop = [r for _, r in _ok(desk_results, "proposed")]
    qs = statistics.median(r.Q_s for r in prop)
    qr = statistics.median(r.Q_r for r in prop)
    off = statistics.median(r.offset_err for r in prop)
    runtime = statistics.median(r.runtime_s for r in prop)
    ok = len(prop) == 24 and qs < 0.0018 and qr < 0.0074 and off < 0.5 and runtime <= 8 * 180
    verdict("2 (proposed meets requirements)", ok,
            f"median Q_s {qs:.5f} px, Q_r {qr:.5f} deg, offset {off:.4f} px over {len(prop)} WIs; "
            f"median runtime {runtime:.0f} s on one core")


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason=MILD_APERTURE)
def test_criterion_2_baseline_violates_spacing(desk_results, verdict):
    base30 = [r for row, r in _ok(desk_results, BASELINE) if float(row["F_mm"]) == 30.0]
    violated = sum(not r.spacing_ok for r in base30) / len(base30)
    verdict("2 (baseline violates spacing bound)", violated > 0.5,
            f"baseline violates the spacing bound on {violated:.0%} of {len(base30)} F=30 WIs")


# 3. Table 1 order of magnitude

def _mean_qg(desk_results, method, F):
    vals = [r.Q_g for row, r in _ok(desk_results, method)
            if float(row["F_mm"]) == F and float(row["sigma_g"]) == SIGMA_G]
    return float(np.mean(vals)) if vals else math.nan


@pytest.mark.slow
def test_criterion_3_proposed_grid_error(desk_results, verdict):
    p30, b30 = _mean_qg(desk_results, "proposed", 30.0), _mean_qg(desk_results, BASELINE, 30.0)
    p249 = _mean_qg(desk_results, "proposed", 249.0)
    ok = 0.02 <= p30 <= 0.25 and b30 >= 5 * p30 and p249 < 0.5
    verdict("3 (proposed mean Q_g and ratio)", ok,
            f"F=30: proposed {p30:.4f} px, {b30 / p30:.1f}x better than the baseline; "
            f"F=249: proposed {p249:.4f} px")


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason=MILD_APERTURE)
def test_criterion_3_baseline_grid_error(desk_results, verdict):
    b30 = _mean_qg(desk_results, BASELINE, 30.0)
    verdict("3 (baseline mean Q_g)", 0.6 <= b30 <= 2.5, f"F=30: baseline {b30:.4f} px")


# 4. ideal accuracy

def _lattice(m):
    side = int(math.ceil(math.sqrt(m * 2 / math.sqrt(3)))) + 2
    _, pts = build_grid(14.3, 0.0, (0.0, 0.0), (side * 15, side * 13), margin_ml=0.0)
    assert len(pts) >= m
    return pts[:m]


def _isotropic_2d(rng, shape, sigma):
    # the camera's grid noise: per-axis std sigma / sqrt(2)
    return rng.normal(0.0, sigma / math.sqrt(2), size=shape)


def _chi_model(rng, shape, sigma):
    # one squared normal per point, the model the chi expectation assumes
    theta = rng.uniform(0.0, 2 * math.pi, size=shape[0])
    r = np.abs(rng.normal(0.0, sigma, size=shape[0]))
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def _monte_carlo(m, trials, noise):
    rng = np.random.default_rng([0, m])
    true = _lattice(m)
    samples = np.array([q_g_points(true + noise(rng, true.shape, SIGMA_G), true, 14.3)[0]
                        for _ in range(trials)])
    expected = q_g_ideal_expectation(SIGMA_G, m)
    se = samples.std(ddof=1) / math.sqrt(trials)
    return samples.mean(), expected, abs(samples.mean() - expected) / se


TRIALS = [pytest.param(100, 2000, marks=pytest.mark.xfail(
              strict=True, reason="2D noise has 2M degrees of freedom, an O(1/M) offset that "
                                  "2000 trials resolve at M=100, see ledger")),
          (10_000, 200), (100_000, 100)]


@pytest.mark.parametrize("m, trials", TRIALS)
def test_criterion_4_ideal_accuracy(m, trials, verdict):
    mc, expected, z = _monte_carlo(m, trials, _isotropic_2d)
    ok = z < 3
    if m == 100_000:
        ok = ok and abs(expected / SIGMA_G - 1) < 1e-4
    verdict(f"4 (ideal Q_g, camera grid noise, M={m})", ok,
            f"Monte-Carlo {mc:.6f} vs expected {expected:.6f} px, {z:.2f} SE; "
            f"expected/sigma_g = {expected / SIGMA_G:.6f}")


@pytest.mark.parametrize("m, trials", [(100, 2000), (10_000, 200), (100_000, 100)])
def test_criterion_4_chi_model(m, trials, verdict):
    mc, expected, z = _monte_carlo(m, trials, _chi_model)
    verdict(f"4 (ideal Q_g, chi noise model, M={m})", z < 3,
            f"Monte-Carlo {mc:.6f} vs expected {expected:.6f} px, {z:.2f} SE")


# 5. noise insensitivity

@pytest.mark.slow
def test_criterion_5_noise_insensitivity(desk_results, verdict):
    rows, reports = desk_results
    corr = corpus_stats(reports, rows).correlations["proposed"]
    rn, rg = corr["sigma_n"], corr["sigma_g"]
    ok = rn is not None and rg is not None and abs(rn) < 0.3 and abs(rg) < 0.3
    verdict("5 (noise insensitivity)", ok, f"r(Q_g, sigma_n) = {rn}, r(Q_g, sigma_g) = {rg}")


# 6. lattice oracle

@pytest.fixture(scope="module")
def oracle_estimates():
    hp = Hyperparams(1000.0, 0.5, 0.1)
    out = {}
    for alpha in (0.0, 0.1, 1.0):
        t0 = time.perf_counter()
        est = estimate_spacing_rotation(hex_disc_image((4000, 4000), 15.0, alpha), hyperparams=hp)
        dt = time.perf_counter() - t0
        shifted = estimate_spacing_rotation(hex_disc_image((4000, 4000), 15.0, alpha, (5, -3)),
                                            hyperparams=hp)
        out[alpha] = (est, shifted, dt)
    return out


def test_criterion_6_lattice_oracle(oracle_estimates, verdict):
    details, ok = [], True
    for alpha, (est, shifted, dt) in oracle_estimates.items():
        ed, ea = abs(est.spacing_px - 15.0), abs(est.rotation_deg - alpha)
        td = abs(shifted.spacing_px - est.spacing_px)
        ta = abs(shifted.rotation_deg - est.rotation_deg)
        ok &= ed < 1e-3 and ea < 1e-3 and td < 1e-4 and ta < 1e-4 and dt < 30
        details.append(f"alpha={alpha}: |dd| {ed:.1e}, |da| {ea:.1e}, shift {max(td, ta):.1e}, "
                       f"{dt:.1f} s")
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        b = rng.normal(size=(2, 2))
        if abs(np.linalg.det(b)) < 1e-3:
            continue
        m = np.linalg.inv(b).T
        b1, b2 = freq_to_spatial(m[0], m[1])
        worst = max(worst, float(np.abs(np.vstack([b1, b2]) - b).max()))
    ok &= worst < 1e-9
    verdict("6 (lattice oracle)", ok, "; ".join(details) + f"; round-trip {worst:.1e}")


# 7. decode properties

def test_criterion_7_decode(decoded_white, verdict):
    cfg, white, _, _, grid = decoded_white
    lf = decode(white, white, grid, DecodeOptions(bayer_pattern=cfg.bayer_pattern))
    h = lf.patch_size // 2
    centre, cmask = lf.subaperture(h, h), lf.subaperture_mask(h, h)
    v = centre[~cmask]
    cv = float(v.std() / v.mean())

    rng = np.random.default_rng(7)
    data = np.full((5, 5, 10, 12, 3), 0.42, dtype=np.float32)
    mask = np.zeros(data.shape[:4], dtype=bool)
    rect, rmask = hex_to_rect(data, mask, np.arange(12) % 2 == 1, "gradient")
    flat_err = float(np.abs(rect[~rmask] - 0.42).max())

    malvar_err = 0.0
    for pattern in ("RGGB", "GRBG", "GBRG", "BGGR"):
        mosaic = rng.uniform(size=(64, 64))
        malvar_err = max(malvar_err,
                         float(np.abs(demosaic_malvar(mosaic, pattern)
                                      - malvar_oracle(mosaic, pattern)).max()))
    ok = cv < 0.02 and flat_err < 1e-6 and malvar_err < 1e-6
    verdict("7 (white CV, hex->rect, Malvar)", ok,
            f"central CV {cv:.4f}, hex->rect error {flat_err:.1e}, Malvar error {malvar_err:.1e}")


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="on mild-aperture scenes the baseline grid follows the "
                                       "inward-shifted lens images and ghosts less, see ledger")
def test_criterion_7_ghosting(desk_results, verdict):
    prop = {r.wi_id: (row["aperture"], r.meta.get("ghosting"))
            for row, r in _ok(desk_results, "proposed")}
    base = {r.wi_id: r.meta.get("ghosting") for _, r in _ok(desk_results, BASELINE)}
    wins = {}
    for k, (aperture, g) in prop.items():
        if g is not None and base.get(k) is not None:
            wins.setdefault(aperture, []).append(g <= base[k])
    total = [w for ws in wins.values() for w in ws]
    share = sum(total) / len(total) if total else 0.0
    parts = ", ".join(f"{a} {sum(w)}/{len(w)}" for a, w in sorted(wins.items()))
    verdict("7 (ghosting)", share >= 0.75,
            f"proposed grid ghosts no more than the baseline on {share:.0%} of {len(total)} "
            f"scenes ({parts})")


# 8. excluded

def test_criterion_8_excluded(capsys):
    with capsys.disabled():
        print("\nEXCLUDED criterion 8: camera calibration numbers need physical checkerboard "
              "captures and are not part of this package")
