"""Baseline grid estimator: disc filtering, integer local maxima and a least-squares lattice fit.

This follows the classic toolbox approach. Lens centers are taken at
integer-pixel maxima of the disc-filtered white image, and a regular
lattice ``o + m b1 + n b2`` is fitted to them by linear least squares with
alternating index assignment.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal
from scipy.spatial import cKDTree

from .grid import GridModel, reduce_to_cell

MIN_PEAKS = 100
COLLISION_LIMIT = 0.05


@dataclass
class PeakSet:
    """Integer-pixel local maxima (x, y) and their filtered values."""

    points: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return int(self.points.shape[0])


def disc_kernel(radius: float) -> np.ndarray:
    """Binary disc of the given radius, normalised to unit sum."""
    if not radius > 0:
        raise ValueError("disc radius must be > 0")
    r = int(math.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    k = (xx * xx + yy * yy <= radius * radius).astype(np.float64)
    return k / k.sum()


def non_max_suppression(points: np.ndarray, values: np.ndarray, radius: float) -> np.ndarray:
    """Indices of points kept by greedy suppression in decreasing value order."""
    order = np.lexsort((points[:, 0], points[:, 1], -values))
    tree = cKDTree(points)
    removed = np.zeros(len(points), dtype=bool)
    keep = []
    for k in order:
        if removed[k]:
            continue
        keep.append(k)
        removed[tree.query_ball_point(points[k], radius)] = True
    return np.array(sorted(keep), dtype=np.int64)


def disk_filter_maxima(img: np.ndarray, disk_radius: float, spacing: float | None = None,
                       rel_floor: float = 0.2) -> PeakSet:
    """Local maxima of the disc-filtered image, at least half a lens pitch apart.

    Args:
        img: Raw white image, indexed ``[y, x]``.
        disk_radius: Disc kernel radius in pixels (about half the pitch).
        spacing: Lens pitch for the suppression radius 0.5 d; defaults to 2 * disk_radius.
        rel_floor: Maxima below this fraction of the global maximum are dropped.
    """
    img = np.asarray(img, dtype=np.float32)
    spacing = 2.0 * disk_radius if spacing is None else spacing
    filt = signal.fftconvolve(img, disc_kernel(disk_radius).astype(np.float32), mode="same")
    nms = 0.5 * spacing
    r = int(math.floor(nms))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    footprint = xx * xx + yy * yy <= nms * nms
    local = ndimage.maximum_filter(filt, footprint=footprint, mode="constant", cval=-np.inf)
    mask = (filt >= local) & (filt > rel_floor * float(filt.max()))
    ys, xs = np.nonzero(mask)
    pts = np.column_stack([xs, ys]).astype(float)
    vals = filt[ys, xs].astype(float)
    if len(pts) > 1:
        keep = non_max_suppression(pts, vals, nms)
        pts, vals = pts[keep], vals[keep]
    return PeakSet(pts, vals)


def initial_orientation(points: np.ndarray) -> tuple[float, float]:
    """Spacing and rotation (degrees, in [-30, 30)) from nearest-neighbour difference vectors.

    The six neighbour directions of a hex lattice coincide modulo 60 degrees,
    so the circular mean of 6 theta gives the rotation of the class near 0 deg.
    """
    tree = cKDTree(points)
    k = min(7, len(points))
    dist, idx = tree.query(points, k=k)
    d0 = float(np.median(dist[:, 1]))
    diffs = points[idx[:, 1:]] - points[:, None, :]
    lens = np.hypot(diffs[..., 0], diffs[..., 1])
    ok = np.abs(lens - d0) < 0.25 * d0
    ang = np.arctan2(diffs[..., 1][ok], diffs[..., 0][ok])
    mean6 = np.angle(np.mean(np.exp(6j * ang)))
    return d0, math.degrees(mean6 / 6.0)


def _round_indices(points: np.ndarray, basis: np.ndarray, origin: np.ndarray) -> np.ndarray:
    return np.rint(np.linalg.solve(basis, (points - origin).T).T).astype(np.int64)


def _collision_rate(idx: np.ndarray) -> float:
    uniq = np.unique(idx, axis=0)
    return 1.0 - len(uniq) / len(idx)


def _fit_subset(points, b1, b2, o, max_iter):
    prev = None
    it = 0
    for it in range(1, max_iter + 1):
        idx = _round_indices(points, np.column_stack([b1, b2]), o)
        if _collision_rate(idx) > COLLISION_LIMIT:
            raise ValueError("lattice fit failed: index assignment collisions above 5%")
        if prev is not None and np.array_equal(idx, prev):
            break
        design = np.column_stack([np.ones(len(idx)), idx[:, 0], idx[:, 1]]).astype(float)
        sol, *_ = np.linalg.lstsq(design, points, rcond=None)
        o, b1, b2 = sol[0], sol[1], sol[2]
        prev = idx
    return b1, b2, o, it


def fit_lattice(points: np.ndarray, spacing: float, rotation_deg: float, origin: np.ndarray,
                max_iter: int = 10, start_radius_ml: float = 8.0) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Alternate index rounding and linear least squares for ``c = o + m b1 + n b2``.

    The initial spacing from integer maxima is too coarse to index lenses far
    from ``origin`` correctly, so the fit starts on the lenses within
    ``start_radius_ml`` pitches of ``origin`` and the radius doubles until all
    points are included. Each stage runs at most ``max_iter`` iterations.

    Returns:
        ``(b1, b2, o, iterations)`` with the total iteration count.

    Raises:
        ValueError: "lattice fit failed" when more than 5% of the points
            share an index with another point.
    """
    a = math.radians(rotation_deg)
    b1 = spacing * np.array([math.cos(a), math.sin(a)])
    b2 = spacing * np.array([math.cos(a + math.pi / 3), math.sin(a + math.pi / 3)])
    o = np.asarray(origin, dtype=float)
    dist = np.hypot(*(points - o).T)
    radius = start_radius_ml * spacing
    total = 0
    while True:
        sel = points[dist <= radius]
        if len(sel) < 3:
            raise ValueError("lattice fit failed: too few points near the centre")
        b1, b2, o, it = _fit_subset(sel, b1, b2, o, max_iter)
        total += it
        if radius >= dist.max():
            return b1, b2, o, total
        radius *= 2.0


def grid_from_vectors(b1: np.ndarray, b2: np.ndarray, origin: np.ndarray,
                      sensor_px: tuple[int, int]) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Spacing, rotation, offset and canonical basis from fitted lattice vectors.

    ``b2`` is the fitted vector at about +60 degrees from ``b1``; the
    canonical second basis vector at +120 degrees is ``b2 - b1``.
    """
    spacing = 0.5 * (float(np.hypot(*b1)) + float(np.hypot(*(b2 - b1))))
    ang1 = math.atan2(b1[1], b1[0])
    ang2 = math.atan2(b2[1], b2[0]) - math.pi / 3
    rot = math.degrees(math.atan2(math.sin(ang1) + math.sin(ang2), math.cos(ang1) + math.cos(ang2)))
    # fold into [-30, 30) so the convention matches the Fourier estimator
    rot = (rot + 30.0) % 60.0 - 30.0
    center = np.array([(sensor_px[0] - 1) / 2.0, (sensor_px[1] - 1) / 2.0])
    offset = reduce_to_cell(np.asarray(origin) - center, spacing, rot)
    basis = np.column_stack([b1, b2 - b1])
    return spacing, rot, offset, basis


def fit_grid_ls(peaks: PeakSet, sensor_px: tuple[int, int], max_iter: int = 10) -> GridModel:
    """Regular hex grid best approximating the peaks in the least-squares sense.

    Raises:
        ValueError: with fewer than 100 peaks, or "lattice fit failed".
    """
    pts = np.asarray(peaks.points, dtype=float)
    if len(pts) < MIN_PEAKS:
        raise ValueError(f"need at least {MIN_PEAKS} peaks, got {len(pts)}")
    d0, rot0 = initial_orientation(pts)
    center = np.array([(sensor_px[0] - 1) / 2.0, (sensor_px[1] - 1) / 2.0])
    ref = pts[int(np.argmin(np.hypot(*(pts - center).T)))]
    b1, b2, o, iters = fit_lattice(pts, d0, rot0, ref, max_iter)
    spacing, rot, offset, basis = grid_from_vectors(b1, b2, o, sensor_px)
    return GridModel(spacing, rot, tuple(offset), basis, sensor_px, method="baseline-dansereau",
                     extra={"peaks": len(pts), "iterations": iters})


def estimate_baseline(img: np.ndarray, expected_spacing: float | None = None,
                      disk_radius: float | None = None) -> GridModel:
    """Full baseline pipeline on a raw white image scaled to [0, 1].

    Args:
        img: Raw white image.
        expected_spacing: Approximate pitch in pixels; estimated from a
            coarse peak pass when omitted.
        disk_radius: Disc kernel radius; defaults to round(d / 2).
    """
    t0 = time.perf_counter()
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape
    if expected_spacing is None:
        coarse = disk_filter_maxima(img, 3.0, spacing=6.0)
        if len(coarse) < 7:
            raise ValueError("lattice fit failed: too few maxima for a spacing guess")
        expected_spacing, _ = initial_orientation(coarse.points)
    radius = float(round(expected_spacing / 2.0)) if disk_radius is None else disk_radius
    peaks = disk_filter_maxima(img, radius, spacing=expected_spacing)
    grid = fit_grid_ls(peaks, (w, h))
    grid.runtime_s = time.perf_counter() - t0
    grid.extra["disk_radius"] = radius
    return grid
