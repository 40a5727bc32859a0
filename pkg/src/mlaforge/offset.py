"""Spatial-domain estimation of the global grid offset.

Only the central region is used, where perspective and orthogonal lens
centers differ by less than half a pixel, so the brightness maxima of the
lens images can stand in for the perspective centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import hex_basis, reduce_to_cell

LOCAL_BLOCK = 17


def restrict_region(spacing_px: float, main_focal_mm: float, ml_focal_um: float,
                    sensor_px: tuple[int, int] | None = None) -> int:
    """Radius, in microlenses, of the region where |c^p - c^o| stays below 0.5 px.

    Returns the largest integer i with ``d i (lambda - 1) < 0.5`` for
    ``lambda = (F + f) / F``, capped at half the smaller sensor side when
    ``sensor_px`` is given.

    Raises:
        ValueError: for non-positive inputs, or when the region is unbounded
            (f = 0) and no sensor size is given to cap it.
    """
    if not (spacing_px > 0 and main_focal_mm > 0 and ml_focal_um >= 0):
        raise ValueError("spacing and focal lengths must be positive")
    cap = None
    if sensor_px is not None:
        cap = int(math.floor(min(sensor_px) / 2.0 / spacing_px))
    lam1 = ml_focal_um / (main_focal_mm * 1000.0)
    if lam1 == 0:
        if cap is None:
            raise ValueError("unbounded region: give sensor_px to cap it")
        return cap
    x = 0.5 / (spacing_px * lam1)
    i = int(math.ceil(x)) - 1
    return i if cap is None else min(i, cap)


def raw_to_gray(raw: np.ndarray) -> tuple[np.ndarray, float]:
    """2x2 box mean of a mosaiced image, removing the Bayer modulation.

    Returns:
        ``(gray, shift)``: gray[y, x] averages raw[y:y+2, x:x+2] and so sits at
        (x + shift, y + shift) in raw pixel coordinates.
    """
    a = np.asarray(raw, dtype=np.float32)
    a = np.pad(a, ((0, 1), (0, 1)), mode="edge")
    gray = 0.25 * (a[:-1, :-1] + a[1:, :-1] + a[:-1, 1:] + a[1:, 1:])
    return gray, 0.5


@dataclass
class DetectedCenters:
    """Lens-image centroids found inside the disc region (center, radius)."""

    ids: np.ndarray
    centroids: np.ndarray
    masses: np.ndarray
    center: tuple[float, float]
    radius: float

    def __len__(self) -> int:
        return int(self.centroids.shape[0])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("cluster,cx,cy,mass\n")
            for k, (c, m) in enumerate(zip(self.centroids, self.masses)):
                fh.write(f"{int(self.ids[k])},{c[0]:.6f},{c[1]:.6f},{m:.6g}\n")


def local_mean(img: np.ndarray, block: int = LOCAL_BLOCK) -> np.ndarray:
    """Gaussian-weighted neighbourhood mean with std (block - 1) / 6, so the block spans +-3 std."""
    if block < 3 or block % 2 == 0:
        raise ValueError("block size must be odd and >= 3")
    return ndimage.gaussian_filter(img, (block - 1) / 6.0, mode="nearest")


def local_threshold(img: np.ndarray, block: int = LOCAL_BLOCK) -> np.ndarray:
    """Boolean map of pixels brighter than their Gaussian-weighted neighbourhood mean."""
    return img > local_mean(img, block)


def detect_centers(img: np.ndarray, center: tuple[float, float], radius: float,
                   smoothing_sigma: float = 1.0, block: int = LOCAL_BLOCK) -> DetectedCenters:
    """Intensity centroids of bright clusters inside a disc.

    The image is smoothed with a Gaussian, binarised against its local
    Gaussian-weighted mean and labelled with 8-connectivity. Clusters that
    reach the disc boundary are discarded. Each centroid weights the
    smoothed intensity in excess of the local mean, so the weights fall to
    zero at the cluster border.

    Args:
        img: Gray image indexed ``[y, x]``.
        center: Disc centre (x, y) in pixels.
        radius: Disc radius in pixels.
        smoothing_sigma: Std of the pre-smoothing Gaussian.
        block: Local-mean block size in pixels.

    Raises:
        ValueError: "no microlenses detected" when no cluster survives.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("detect_centers needs a 2D image")
    if not radius > 0:
        raise ValueError("radius must be > 0")
    h, w = img.shape
    cx, cy = center
    pad = block + int(math.ceil(4 * smoothing_sigma))
    x0 = max(int(math.floor(cx - radius)) - pad, 0)
    y0 = max(int(math.floor(cy - radius)) - pad, 0)
    x1 = min(int(math.ceil(cx + radius)) + pad + 1, w)
    y1 = min(int(math.ceil(cy + radius)) + pad + 1, h)
    if x1 <= x0 or y1 <= y0:
        raise ValueError("no microlenses detected: region outside the image")
    sub = img[y0:y1, x0:x1]
    smooth = ndimage.gaussian_filter(sub, smoothing_sigma, mode="nearest") if smoothing_sigma > 0 else sub
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dist = np.hypot(xx - cx, yy - cy)
    inside = dist < radius
    excess = smooth - local_mean(smooth, block)
    binary = (excess > 0) & inside
    labels, n = ndimage.label(binary, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        raise ValueError("no microlenses detected")
    idx = np.arange(1, n + 1)
    # a cluster touches the boundary if one of its pixels borders the outside of the disc
    edge = binary & ~ndimage.binary_erosion(inside, structure=np.ones((3, 3), dtype=bool))
    touching = np.unique(labels[edge])
    keep = np.setdiff1d(idx, touching[touching > 0])
    if keep.size == 0:
        raise ValueError("no microlenses detected")
    weights = np.where(binary, excess, 0.0)
    masses = np.asarray(ndimage.sum(weights, labels, keep), dtype=float)
    cyx = np.array(ndimage.center_of_mass(weights, labels, keep), dtype=float).reshape(-1, 2)
    cents = np.column_stack([cyx[:, 1] + x0, cyx[:, 0] + y0])
    good = masses > 0
    if not good.any():
        raise ValueError("no microlenses detected")
    return DetectedCenters(keep[good], cents[good], masses[good], (float(cx), float(cy)),
                           float(radius))


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Lower weighted median: smallest value whose cumulative weight reaches half the total."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.size == 0 or not weights.sum() > 0:
        raise ValueError("weighted median needs positive total weight")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    k = int(np.searchsorted(cum, 0.5 * cum[-1]))
    return float(values[order][k])


def _circular_offset(points: np.ndarray, spacing: float, rotation_deg: float) -> np.ndarray:
    """Lattice translation best explaining ``points``, as a circular mean on the lattice torus."""
    basis = hex_basis(spacing, rotation_deg)
    coords = np.linalg.solve(basis, points.T).T
    phase = np.exp(2j * np.pi * coords)
    mean = phase.mean(axis=0)
    frac = np.angle(mean) / (2 * np.pi)
    return basis @ frac


@dataclass
class OffsetResult:
    offset_px: np.ndarray
    initial_px: np.ndarray
    matched: int
    rejected: int
    residual_rms: float


def estimate_offset(spacing: float, rotation_deg: float, centers: DetectedCenters,
                    image_center: tuple[float, float], refine: bool = True,
                    weight_sigma: float | None = None, min_centers: int = 10) -> OffsetResult:
    """Offset of lens (0, 0) from ``image_center`` for a grid of known spacing and rotation.

    Detected centers are matched to their nearest grid point (pairs further
    than d/2 apart are rejected) and the per-axis median residual gives the
    initial offset. The optional refinement takes a Gaussian-weighted median
    favouring central lenses, with std ``weight_sigma`` (default half the
    detection radius).

    Raises:
        ValueError: with fewer than ``min_centers`` centers, or "offset
            ambiguous" when the residual spread exceeds d/2.
    """
    pts = np.asarray(centers.centroids, dtype=float) - np.asarray(image_center, dtype=float)
    if pts.shape[0] < min_centers:
        raise ValueError(f"need at least {min_centers} detected centers, got {pts.shape[0]}")
    start = _circular_offset(pts, spacing, rotation_deg)
    res = reduce_to_cell(pts - start, spacing, rotation_deg)
    ok = np.hypot(res[:, 0], res[:, 1]) <= spacing / 2.0
    if ok.sum() < min_centers:
        raise ValueError("offset ambiguous: too few centers match the grid")
    rms = float(np.sqrt(np.mean(np.sum(res[ok] ** 2, axis=1))))
    if 2.0 * rms > spacing / 2.0:
        raise ValueError("offset ambiguous: residual spread exceeds half the spacing")
    o0 = start + np.median(res[ok], axis=0)
    offset = o0
    if refine:
        res2 = reduce_to_cell(pts - o0, spacing, rotation_deg)
        ok2 = np.hypot(res2[:, 0], res2[:, 1]) <= spacing / 2.0
        sw = weight_sigma if weight_sigma is not None else centers.radius / 2.0
        r2 = np.sum(pts[ok2] ** 2, axis=1)
        wts = np.exp(-r2 / (2.0 * sw * sw))
        if wts.sum() > 0:
            corr = np.array([weighted_median(res2[ok2, 0], wts),
                             weighted_median(res2[ok2, 1], wts)])
            if np.hypot(*corr) >= spacing / 2.0:
                raise ValueError("offset ambiguous: refinement moved by more than d/2")
            offset = o0 + corr
    offset = reduce_to_cell(offset, spacing, rotation_deg)
    return OffsetResult(offset, reduce_to_cell(o0, spacing, rotation_deg), int(ok.sum()),
                        int((~ok).sum()), rms)
