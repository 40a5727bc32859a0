"""Malvar-He-Cutler linear demosaicing with edge-replicated borders."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .._accel import njit, prange, use_numba
from ..synth.sensor import bayer_channels

# 5x5 kernels scaled by 8; all are symmetric, so correlation equals convolution
K_G_AT_RB = np.array([[0, 0, -1, 0, 0],
                      [0, 0, 2, 0, 0],
                      [-1, 2, 4, 2, -1],
                      [0, 0, 2, 0, 0],
                      [0, 0, -1, 0, 0]], dtype=np.float64) / 8.0
# colour whose samples are the horizontal neighbours of a green site
K_ROW = np.array([[0, 0, 0.5, 0, 0],
                  [0, -1, 0, -1, 0],
                  [-1, 4, 5, 4, -1],
                  [0, -1, 0, -1, 0],
                  [0, 0, 0.5, 0, 0]], dtype=np.float64) / 8.0
# colour whose samples are the vertical neighbours of a green site
K_COL = K_ROW.T.copy()
# red at blue sites and blue at red sites
K_DIAG = np.array([[0, 0, -1.5, 0, 0],
                   [0, 2, 0, 2, 0],
                   [-1.5, 0, 6, 0, -1.5],
                   [0, 2, 0, 2, 0],
                   [0, 0, -1.5, 0, 0]], dtype=np.float64) / 8.0

SITE_R, SITE_G_RROW, SITE_G_BROW, SITE_B = 0, 1, 2, 3


def site_classes(pattern: str, shape: tuple[int, int]) -> np.ndarray:
    """Per-pixel site class: R, G with red row neighbours, G with blue row neighbours, B."""
    chan = bayer_channels(pattern, (max(shape[0], 2), max(shape[1], 2)))
    cls = np.empty(chan.shape, dtype=np.uint8)
    cls[chan == 0] = SITE_R
    cls[chan == 2] = SITE_B
    green = chan == 1
    # the horizontal neighbour of a green site in the 2x2 block
    neighbour = np.roll(chan, -1, axis=1)
    cls[green & (neighbour == 0)] = SITE_G_RROW
    cls[green & (neighbour == 2)] = SITE_G_BROW
    return np.ascontiguousarray(cls[:shape[0], :shape[1]])


@njit(parallel=True)
def _malvar_numba(img, cls, kg, krow, kcol, kdiag):
    h, w = img.shape
    out = np.empty((h, w, 3), dtype=np.float32)
    for y in prange(h):
        for x in range(w):
            sg = 0.0
            srow = 0.0
            scol = 0.0
            sdiag = 0.0
            for dy in range(-2, 3):
                yy = min(max(y + dy, 0), h - 1)
                for dx in range(-2, 3):
                    xx = min(max(x + dx, 0), w - 1)
                    v = img[yy, xx]
                    sg += kg[dy + 2, dx + 2] * v
                    srow += krow[dy + 2, dx + 2] * v
                    scol += kcol[dy + 2, dx + 2] * v
                    sdiag += kdiag[dy + 2, dx + 2] * v
            c = cls[y, x]
            v0 = img[y, x]
            if c == 0:
                out[y, x, 0] = v0
                out[y, x, 1] = sg
                out[y, x, 2] = sdiag
            elif c == 3:
                out[y, x, 0] = sdiag
                out[y, x, 1] = sg
                out[y, x, 2] = v0
            elif c == 1:
                out[y, x, 0] = srow
                out[y, x, 1] = v0
                out[y, x, 2] = scol
            else:
                out[y, x, 0] = scol
                out[y, x, 1] = v0
                out[y, x, 2] = srow
    return out


def _filter_numpy(padded: np.ndarray, kernel: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    acc = np.zeros(shape, dtype=np.float64)
    for dy, dx in zip(*np.nonzero(kernel)):
        acc += kernel[dy, dx] * padded[dy:dy + h, dx:dx + w]
    return acc


def _malvar_numpy(img, cls):
    h, w = img.shape
    padded = np.pad(img.astype(np.float64), 2, mode="edge")
    g = _filter_numpy(padded, K_G_AT_RB, (h, w))
    row = _filter_numpy(padded, K_ROW, (h, w))
    col = _filter_numpy(padded, K_COL, (h, w))
    diag = _filter_numpy(padded, K_DIAG, (h, w))
    x = img.astype(np.float64)
    r_site, b_site = cls == SITE_R, cls == SITE_B
    g_rrow, g_brow = cls == SITE_G_RROW, cls == SITE_G_BROW
    red = np.select([r_site, b_site, g_rrow, g_brow], [x, diag, row, col])
    green = np.where(r_site | b_site, g, x)
    blue = np.select([r_site, b_site, g_rrow, g_brow], [diag, x, col, row])
    return np.stack([red, green, blue], axis=-1).astype(np.float32)


def demosaic_malvar(img: np.ndarray, pattern: str = "GRBG") -> np.ndarray:
    """Demosaic a Bayer mosaic with the Malvar-He-Cutler 5x5 linear filters.

    Args:
        img: Mosaiced image indexed ``[y, x]``.
        pattern: Top-left 2x2 Bayer block, row by row (e.g. "GRBG").

    Returns:
        float32 RGB image of shape (H, W, 3), unclipped.
    """
    img = np.ascontiguousarray(img, dtype=np.float32)
    if img.ndim != 2:
        raise ValueError("demosaic expects a 2D mosaic")
    cls = site_classes(pattern, img.shape)
    if use_numba():
        return _malvar_numba(img, cls, K_G_AT_RB, K_ROW, K_COL, K_DIAG)
    return _malvar_numpy(img, cls)


def fill_masked(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace masked pixels by the nearest valid pixel of the same Bayer site.

    The 2x2 Bayer period is preserved, so the filled mosaic can be
    demosaiced without masked values entering any interpolation.
    """
    out = np.array(img, dtype=np.float32, copy=True)
    if not mask.any():
        return out
    for dy in (0, 1):
        for dx in (0, 1):
            sub_mask = mask[dy::2, dx::2]
            if not sub_mask.any():
                continue
            if sub_mask.all():
                out[dy::2, dx::2] = 0.0
                continue
            _, (iy, ix) = ndimage.distance_transform_edt(sub_mask, return_indices=True)
            sub = out[dy::2, dx::2]
            out[dy::2, dx::2] = sub[iy, ix]
    return out
