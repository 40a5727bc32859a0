"""Hex-packed to rectangular spatial resampling of a sliced light field.

Rows whose lenses are shifted by half a pitch interleave with the unshifted
rows on a grid of half-pitch columns. Each row therefore fills every other
column of the output directly, and the columns in between are interpolated
from the left/right samples of the same row or the up/down samples of the
adjacent rows, chosen by the local gradients.
"""

from __future__ import annotations

import numpy as np

from .._accel import njit, prange, use_numba

MODES = ("gradient", "bilinear")
GRADIENT_FACTOR = 0.5


@njit(parallel=True)
def _hex_to_rect_numba(data, mask, shift, factor, gradient):
    p, q, n_s, n_t, nc = data.shape
    n_x = 2 * n_s
    out = np.zeros((p, q, n_x, n_t, nc), dtype=np.float32)
    out_mask = np.ones((p, q, n_x, n_t), dtype=np.bool_)
    for t in prange(n_t):
        sh = shift[t]
        for X in range(n_x):
            if (X - sh) % 2 == 0:
                s_ = (X - sh) // 2
                if s_ < n_s:
                    for u in range(p):
                        for v in range(q):
                            if not mask[u, v, s_, t]:
                                out_mask[u, v, X, t] = False
                                for ch in range(nc):
                                    out[u, v, X, t, ch] = data[u, v, s_, t, ch]
                continue
            # neighbour lens indices (-1 when absent)
            sl = (X - 1 - sh) // 2 if X - 1 >= 0 else -1
            sr = (X + 1 - sh) // 2 if X + 1 < n_x else -1
            if sr >= n_s:
                sr = -1
            su = -1
            sd = -1
            if t > 0:
                if (X - shift[t - 1]) % 2 == 0:
                    su = (X - shift[t - 1]) // 2
                    if su >= n_s:
                        su = -1
            if t < n_t - 1:
                if (X - shift[t + 1]) % 2 == 0:
                    sd = (X - shift[t + 1]) // 2
                    if sd >= n_s:
                        sd = -1
            for u in range(p):
                for v in range(q):
                    okl = sl >= 0 and not mask[u, v, sl, t]
                    okr = sr >= 0 and not mask[u, v, sr, t]
                    oku = su >= 0 and not mask[u, v, su, t - 1]
                    okd = sd >= 0 and not mask[u, v, sd, t + 1]
                    h_ok = okl and okr
                    v_ok = oku and okd
                    mode = 0  # 1 horizontal, 2 vertical, 3 four-neighbour, 4 any valid
                    if h_ok and v_ok:
                        if gradient:
                            gx = 0.0
                            gy = 0.0
                            for ch in range(nc):
                                gx += abs(data[u, v, sl, t, ch] - data[u, v, sr, t, ch])
                                gy += abs(data[u, v, su, t - 1, ch] - data[u, v, sd, t + 1, ch])
                            if gx < factor * gy:
                                mode = 1
                            elif gy < factor * gx:
                                mode = 2
                            else:
                                mode = 3
                        else:
                            mode = 3
                    elif h_ok:
                        mode = 1
                    elif v_ok:
                        mode = 2
                    elif okl or okr or oku or okd:
                        mode = 4
                    if mode == 0:
                        continue
                    out_mask[u, v, X, t] = False
                    for ch in range(nc):
                        if mode == 1:
                            val = 0.5 * (data[u, v, sl, t, ch] + data[u, v, sr, t, ch])
                        elif mode == 2:
                            val = 0.5 * (data[u, v, su, t - 1, ch] + data[u, v, sd, t + 1, ch])
                        elif mode == 3:
                            val = 0.25 * (data[u, v, sl, t, ch] + data[u, v, sr, t, ch]
                                          + data[u, v, su, t - 1, ch] + data[u, v, sd, t + 1, ch])
                        else:
                            acc = 0.0
                            cnt = 0
                            if okl:
                                acc += data[u, v, sl, t, ch]
                                cnt += 1
                            if okr:
                                acc += data[u, v, sr, t, ch]
                                cnt += 1
                            if oku:
                                acc += data[u, v, su, t - 1, ch]
                                cnt += 1
                            if okd:
                                acc += data[u, v, sd, t + 1, ch]
                                cnt += 1
                            val = acc / cnt
                        out[u, v, X, t, ch] = val
    return out, out_mask


def _hex_to_rect_numpy(data, mask, shift, factor, gradient):
    p, q, n_s, n_t, nc = data.shape
    n_x = 2 * n_s
    full = np.zeros((p, q, n_x + 2, n_t + 2, nc), dtype=np.float32)
    valid = np.zeros((p, q, n_x + 2, n_t + 2), dtype=bool)
    known = np.zeros((n_x + 2, n_t + 2), dtype=bool)
    for t in range(n_t):
        cols = 1 + shift[t] + 2 * np.arange(n_s)
        keep = cols <= n_x
        full[:, :, cols[keep], t + 1] = data[:, :, keep, t]
        valid[:, :, cols[keep], t + 1] = ~mask[:, :, keep, t]
        known[cols[keep], t + 1] = True
    c = slice(1, n_x + 1), slice(1, n_t + 1)
    L, R = (slice(0, n_x), c[1]), (slice(2, n_x + 2), c[1])
    U, D = (c[0], slice(0, n_t)), (c[0], slice(2, n_t + 2))

    def get(a, sl):
        return a[:, :, sl[0], sl[1]]

    fl, fr, fu, fd = get(full, L), get(full, R), get(full, U), get(full, D)
    okl, okr, oku, okd = get(valid, L), get(valid, R), get(valid, U), get(valid, D)
    h_ok, v_ok = okl & okr, oku & okd
    gx = np.abs(fl - fr).sum(axis=-1)
    gy = np.abs(fu - fd).sum(axis=-1)
    both = h_ok & v_ok
    if gradient:
        horiz = both & (gx < factor * gy)
        vert = both & ~horiz & (gy < factor * gx)
    else:
        horiz = np.zeros_like(both)
        vert = np.zeros_like(both)
    four = both & ~horiz & ~vert
    horiz |= h_ok & ~v_ok
    vert |= v_ok & ~h_ok
    cnt = okl.astype(np.float32) + okr + oku + okd
    anyv = ~h_ok & ~v_ok & (cnt > 0)
    acc = (fl * okl[..., None] + fr * okr[..., None] + fu * oku[..., None] + fd * okd[..., None])
    interp = np.zeros_like(fl)
    interp = np.where(horiz[..., None], 0.5 * (fl + fr), interp)
    interp = np.where(vert[..., None], 0.5 * (fu + fd), interp)
    interp = np.where(four[..., None], 0.25 * (fl + fr + fu + fd), interp)
    interp = np.where(anyv[..., None], acc / np.maximum(cnt, 1.0)[..., None], interp)
    interp_ok = horiz | vert | four | anyv
    is_known = known[c[0], c[1]]
    out = np.where(is_known[None, None, ..., None], get(full, c), interp)
    ok = np.where(is_known[None, None], get(valid, c), interp_ok)
    out = np.where(ok[..., None], out, 0.0).astype(np.float32)
    return out, ~ok


def hex_to_rect(data: np.ndarray, mask: np.ndarray, shifted_rows: np.ndarray,
                mode: str = "gradient", factor: float = GRADIENT_FACTOR
                ) -> tuple[np.ndarray, np.ndarray]:
    """Resample a hex-packed light field onto half-pitch columns.

    Args:
        data: ``(u, v, s, t, channel)`` samples; lens (s, t) of a shifted row
            sits half a pitch right of lens (s, t) of an unshifted row.
        mask: ``(u, v, s, t)`` invalid samples.
        shifted_rows: Boolean per row t.
        mode: "gradient" picks horizontal, vertical or four-neighbour
            interpolation per sample; "bilinear" always averages the four neighbours.
        factor: A direction is interpolated along when its gradient is below
            ``factor`` times the other one.

    Returns:
        ``(data, mask)`` with 2 * n_s columns; column X of row t sits at
        X / 2 lens pitches.
    """
    if mode not in MODES:
        raise ValueError(f"unknown resample mode {mode!r}")
    data = np.ascontiguousarray(data, dtype=np.float32)
    if data.ndim == 4:
        data = data[..., None]
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    shift = np.asarray(shifted_rows, dtype=np.int64)
    if shift.shape != (data.shape[3],) or mask.shape != data.shape[:4]:
        raise ValueError("inconsistent light-field, mask and row-shift shapes")
    fn = _hex_to_rect_numba if use_numba() else _hex_to_rect_numpy
    return fn(data, mask, shift, float(factor), mode == "gradient")
