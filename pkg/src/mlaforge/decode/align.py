"""Grid alignment by one similarity resample, and slicing into lens patches."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._accel import njit, prange, use_numba
from ..grid import GridModel

SQRT3 = math.sqrt(3.0)
MAX_ROTATION_DEG = 5.0


@dataclass
class AlignedLattice:
    """Hex lattice of an aligned image: lens (i, j) at ``origin + k (i + (j mod 2)/2, j sqrt3/2)``."""

    k: int
    origin: tuple[int, int]
    scale: float
    rotation_deg: float
    source_offset_px: tuple[float, float]
    source_sensor_px: tuple[int, int]

    def point(self, i, j) -> np.ndarray:
        i = np.asarray(i, dtype=float)
        j = np.asarray(j)
        x = self.origin[0] + self.k * (i + 0.5 * np.mod(j, 2))
        y = self.origin[1] + self.k * SQRT3 / 2.0 * j
        return np.stack([x, y], axis=-1)

    def to_sensor(self, xy: np.ndarray) -> np.ndarray:
        """Map aligned-image coordinates back to sensor pixels."""
        xy = np.asarray(xy, dtype=float)
        a = math.radians(self.rotation_deg)
        c, s = math.cos(a) / self.scale, math.sin(a) / self.scale
        sx, sy = self.source_sensor_px
        bx = (sx - 1) / 2.0 + self.source_offset_px[0]
        by = (sy - 1) / 2.0 + self.source_offset_px[1]
        dx = xy[..., 0] - self.origin[0]
        dy = xy[..., 1] - self.origin[1]
        return np.stack([bx + c * dx - s * dy, by + s * dx + c * dy], axis=-1)

    def to_dict(self) -> dict:
        return {"k": self.k, "origin": list(self.origin), "scale": self.scale,
                "rotation_deg": self.rotation_deg,
                "source_offset_px": list(self.source_offset_px),
                "source_sensor_px": list(self.source_sensor_px)}


@dataclass
class AlignedImage:
    image: np.ndarray
    mask: np.ndarray
    lattice: AlignedLattice


def aligned_spacing(spacing_px: float) -> int:
    """Integer pitch k = ceil(d) of the aligned image."""
    if not spacing_px > 0:
        raise ValueError("spacing must be > 0")
    return int(math.ceil(spacing_px - 1e-9))


@njit(parallel=True)
def _resample_numba(img, mask, bx, by, c, s, ox, oy, h_out, w_out):
    h, w, nc = img.shape
    out = np.zeros((h_out, w_out, nc), dtype=np.float32)
    out_mask = np.ones((h_out, w_out), dtype=np.bool_)
    for Y in prange(h_out):
        dy = Y - oy
        for X in range(w_out):
            dx = X - ox
            px = bx + c * dx - s * dy
            py = by + s * dx + c * dy
            if px < 0.0 or py < 0.0 or px > w - 1 or py > h - 1:
                continue
            x0 = int(math.floor(px))
            y0 = int(math.floor(py))
            fx = px - x0
            fy = py - y0
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            if mask[y0, x0] or mask[y0, x1] or mask[y1, x0] or mask[y1, x1]:
                continue
            out_mask[Y, X] = False
            for ch in range(nc):
                out[Y, X, ch] = ((1.0 - fy) * ((1.0 - fx) * img[y0, x0, ch] + fx * img[y0, x1, ch])
                                 + fy * ((1.0 - fx) * img[y1, x0, ch] + fx * img[y1, x1, ch]))
    return out, out_mask


def _resample_numpy(img, mask, bx, by, c, s, ox, oy, h_out, w_out):
    h, w, nc = img.shape
    Y, X = np.mgrid[0:h_out, 0:w_out].astype(np.float64)
    dx, dy = X - ox, Y - oy
    px = bx + c * dx - s * dy
    py = by + s * dx + c * dy
    inside = (px >= 0) & (py >= 0) & (px <= w - 1) & (py <= h - 1)
    px = np.where(inside, px, 0.0)
    py = np.where(inside, py, 0.0)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = (px - x0)[..., None]
    fy = (py - y0)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    bad = mask[y0, x0] | mask[y0, x1] | mask[y1, x0] | mask[y1, x1] | ~inside
    out = ((1.0 - fy) * ((1.0 - fx) * img[y0, x0] + fx * img[y0, x1])
           + fy * ((1.0 - fx) * img[y1, x0] + fx * img[y1, x1]))
    out = np.where(bad[..., None], 0.0, out).astype(np.float32)
    return out, bad


def align_to_grid(img: np.ndarray, grid: GridModel, mask: np.ndarray | None = None,
                  max_rotation_deg: float = MAX_ROTATION_DEG) -> AlignedImage:
    """Resample so the grid becomes a canonical hex lattice with integer pitch k = ceil(d).

    One bilinear resample combines the rotation by -alpha, the scale k/d and
    a translation that puts lens (0, 0) on a pixel centre. Output pixels
    whose bilinear support leaves the image or touches a masked pixel are
    zero and masked.

    Args:
        img: (H, W) or (H, W, C) image.
        grid: Estimated grid of the image.
        mask: Optional (H, W) boolean map of invalid input pixels.
        max_rotation_deg: Larger grid rotations are rejected as suspicious.
    """
    if abs(grid.rotation_deg) > max_rotation_deg:
        raise ValueError(f"suspicious grid: rotation {grid.rotation_deg:.3f} deg exceeds "
                         f"{max_rotation_deg} deg")
    img = np.asarray(img, dtype=np.float32)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w = img.shape[:2]
    if mask is None:
        mask = np.zeros((h, w), dtype=bool)
    if mask.shape != (h, w):
        raise ValueError("mask and image sizes differ")
    k = aligned_spacing(grid.spacing_px)
    scale = k / grid.spacing_px
    bx = (w - 1) / 2.0 + grid.offset_px[0]
    by = (h - 1) / 2.0 + grid.offset_px[1]
    ox, oy = int(round(bx * scale)), int(round(by * scale))
    w_out, h_out = int(round(w * scale)), int(round(h * scale))
    a = math.radians(grid.rotation_deg)
    c, s = math.cos(a) / scale, math.sin(a) / scale
    fn = _resample_numba if use_numba() else _resample_numpy
    out, out_mask = fn(np.ascontiguousarray(img), np.ascontiguousarray(mask, dtype=np.bool_),
                       bx, by, c, s, float(ox), float(oy), h_out, w_out)
    if squeeze:
        out = out[..., 0]
    lattice = AlignedLattice(k, (ox, oy), scale, float(grid.rotation_deg),
                             tuple(float(v) for v in grid.offset_px), (w, h))
    return AlignedImage(out, out_mask, lattice)


@dataclass
class LensLayout:
    """Lens indices covered by a sliced light field: s = i - i_min, t = j - j_min."""

    i_min: int
    j_min: int
    n_s: int
    n_t: int

    def shifted_rows(self) -> np.ndarray:
        """True for rows t whose lenses sit half a pitch to the right."""
        return np.mod(np.arange(self.n_t) + self.j_min, 2) == 1


def lens_layout(lattice: AlignedLattice, shape: tuple[int, int]) -> LensLayout:
    """Index box of all lenses whose centre falls inside an aligned image of ``shape`` (H, W)."""
    h, w = shape
    k = lattice.k
    dy = k * SQRT3 / 2.0
    ox, oy = lattice.origin
    j_min = int(math.ceil((-0.5 - oy) / dy))
    j_max = int(math.floor((h - 0.5 - oy) / dy))
    i_min = int(math.ceil((-0.5 - ox) / k - 0.5))
    i_max = int(math.floor((w - 0.5 - ox) / k))
    if j_max < j_min or i_max < i_min:
        raise ValueError("no lens centre inside the aligned image")
    return LensLayout(i_min, j_min, i_max - i_min + 1, j_max - j_min + 1)


@njit(parallel=True)
def _slice_numba(img, mask, centers_x, centers_y, p):
    n_s, n_t = centers_x.shape
    h, w, nc = img.shape
    half = p // 2
    out = np.zeros((p, p, n_s, n_t, nc), dtype=np.float32)
    out_mask = np.ones((p, p, n_s, n_t), dtype=np.bool_)
    for t in prange(n_t):
        for s_ in range(n_s):
            cx = centers_x[s_, t]
            cy = centers_y[s_, t]
            for v in range(p):
                y = cy - half + v
                if y < 0 or y >= h:
                    continue
                for u in range(p):
                    x = cx - half + u
                    if x < 0 or x >= w:
                        continue
                    if mask[y, x]:
                        continue
                    out_mask[u, v, s_, t] = False
                    for ch in range(nc):
                        out[u, v, s_, t, ch] = img[y, x, ch]
    return out, out_mask


def _slice_numpy(img, mask, centers_x, centers_y, p):
    h, w, nc = img.shape
    n_s, n_t = centers_x.shape
    half = p // 2
    out = np.zeros((p, p, n_s, n_t, nc), dtype=np.float32)
    out_mask = np.ones((p, p, n_s, n_t), dtype=bool)
    for v in range(p):
        y = centers_y - half + v
        for u in range(p):
            x = centers_x - half + u
            ok = (x >= 0) & (x < w) & (y >= 0) & (y < h)
            xc, yc = np.clip(x, 0, w - 1), np.clip(y, 0, h - 1)
            ok &= ~mask[yc, xc]
            out[u, v] = np.where(ok[..., None], img[yc, xc], 0.0)
            out_mask[u, v] = ~ok
    return out, out_mask


def patch_size_for(k: int, patch_size: int | None = None) -> int:
    """Odd patch size: ``patch_size`` if given, else k (or k - 1 when k is even)."""
    p = (k if k % 2 == 1 else k - 1) if patch_size is None else int(patch_size)
    if p < 3 or p % 2 == 0:
        raise ValueError("patch size must be odd and >= 3")
    return p


def slice_patches(aligned: AlignedImage, patch_size: int | None = None
                  ) -> tuple[np.ndarray, np.ndarray, LensLayout]:
    """Cut the P x P patch around every lens centre (rounded to the nearest pixel).

    Returns:
        ``(data, mask, layout)`` with data indexed ``(u, v, s, t, channel)``;
        samples outside the image or masked in the aligned image are zero and masked.
    """
    img = aligned.image
    if img.ndim == 2:
        img = img[..., None]
    h, w = img.shape[:2]
    lat = aligned.lattice
    p = patch_size_for(lat.k, patch_size)
    layout = lens_layout(lat, (h, w))
    i = np.arange(layout.n_s) + layout.i_min
    j = np.arange(layout.n_t) + layout.j_min
    I, J = np.meshgrid(i, j, indexing="ij")
    pts = lat.point(I, J)
    cx = np.floor(pts[..., 0] + 0.5).astype(np.int64)
    cy = np.floor(pts[..., 1] + 0.5).astype(np.int64)
    fn = _slice_numba if use_numba() else _slice_numpy
    data, mask = fn(np.ascontiguousarray(img, dtype=np.float32),
                    np.ascontiguousarray(aligned.mask, dtype=np.bool_), cx, cy, p)
    return data, mask, layout
