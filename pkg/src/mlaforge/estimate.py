"""End-to-end grid estimators returning a :class:`GridModel`."""

from __future__ import annotations

import time

import numpy as np

from .fourier import FourierOptions, Hyperparams, estimate_spacing_rotation
from .baseline import estimate_baseline
from .grid import GridModel
from .offset import detect_centers, estimate_offset, raw_to_gray, restrict_region

METHODS = ("proposed", "baseline")
SMOOTHING_PER_PITCH = 0.2


def estimate_proposed(img: np.ndarray, main_focal_mm: float, ml_focal_um: float,
                      options: FourierOptions | None = None,
                      hyperparams: Hyperparams | None = None, refine: bool = True) -> GridModel:
    """Fourier spacing/rotation followed by the central-region offset estimate.

    Args:
        img: Raw mosaiced white image scaled to [0, 1], indexed ``[y, x]``.
        main_focal_mm: Main-lens focal length F, used to size the detection region.
        ml_focal_um: Microlens focal length f.
        options: Fourier pipeline and optimiser settings.
        hyperparams: Fixed preprocessing parameters (skips the optimiser).
        refine: Apply the weighted-median offset refinement.
    """
    t0 = time.perf_counter()
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape
    sr = estimate_spacing_rotation(img, options, hyperparams)
    radius_ml = restrict_region(sr.spacing_px, main_focal_mm, ml_focal_um, (w, h))
    gray, shift = raw_to_gray(img)
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    # touching lens images merge into one cluster at 1 px smoothing; scale it with the pitch
    smoothing = max(1.0, SMOOTHING_PER_PITCH * sr.spacing_px)
    det = detect_centers(gray, (center[0] - shift, center[1] - shift), radius_ml * sr.spacing_px,
                         smoothing_sigma=smoothing)
    det.centroids = det.centroids + shift
    det.center = center
    off = estimate_offset(sr.spacing_px, sr.rotation_deg, det, center, refine=refine)
    runtime = time.perf_counter() - t0
    return GridModel(sr.spacing_px, sr.rotation_deg, tuple(off.offset_px),
                     np.column_stack([sr.b1, sr.b2]), (w, h), method="proposed",
                     hyperparams=sr.hyperparams.to_dict(), objective=sr.objective,
                     runtime_s=runtime,
                     extra={"detected": len(det), "matched": off.matched,
                            "region_radius_ml": radius_ml,
                            "initial_offset_px": [float(v) for v in off.initial_px],
                            "fourier_runtime_s": sr.runtime_s})


def estimate_grid(img: np.ndarray, method: str, main_focal_mm: float, ml_focal_um: float,
                  expected_spacing_px: float | None = None,
                  options: FourierOptions | None = None,
                  hyperparams: Hyperparams | None = None) -> GridModel:
    """Run the named estimator on a raw white image scaled to [0, 1].

    Args:
        img: Raw white image.
        method: "proposed" or "baseline".
        main_focal_mm: Main-lens focal length, used by the proposed offset step.
        ml_focal_um: Microlens focal length.
        expected_spacing_px: Approximate pitch; sizes the baseline disc filter.
        options: Fourier settings for the proposed method.
        hyperparams: Fixed preprocessing parameters for the proposed method.
    """
    if method == "proposed":
        return estimate_proposed(img, main_focal_mm, ml_focal_um, options, hyperparams)
    if method == "baseline":
        return estimate_baseline(img, expected_spacing_px)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
