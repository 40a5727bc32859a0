"""Per-pixel ray tracing kernels for white-image synthesis.

Both implementations consume the same packed arrays:

``cen``   (nj, ni, 3) final microlens centers in micrometres.
``cp``    (nj, ni, 2) perspective centers in sensor pixels.
``inv``   [lam0, p, cx, cy, ox, oy, cos_a, sin_a, dx, dy] for the approximate
          inverse lattice map used to find the owning lens.
``optics`` [F, f, r_ml, r_main^2, a, r_ap^2] in micrometres.
``basis`` (3, 3) rows e1, e2, n of the tilted microlens plane.

Lens samples follow a fixed stratified pattern (equal-area rings in r^2,
golden-angle azimuths) shifted per pixel by a Cranley-Patterson rotation.
The per-pixel shift comes from a splitmix64 hash of (seed, global pixel
index), so both paths and any window split produce the same samples.
"""

from __future__ import annotations

import math

import numpy as np

from .._accel import njit, prange

GOLDEN = 0.6180339887498949
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INC = 0x9E3779B97F4A7C15
_K3 = 0x8CB92BA72F3D8DD7
_INV53 = 1.0 / 9007199254740992.0


@njit(inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _owner_nb(x, y, cp, inv, i0, j0):
    nj = cp.shape[0]
    ni = cp.shape[1]
    lam0, p, cx, cy, ox, oy, ca, sa, dx, dy = (inv[0], inv[1], inv[2], inv[3], inv[4],
                                                inv[5], inv[6], inv[7], inv[8], inv[9])
    X = (x - cx) * p / lam0
    Y = (y - cy) * p / lam0
    ux = ca * X + sa * Y - ox
    uy = -sa * X + ca * Y - oy
    jr = int(math.floor(uy / dy + 0.5))
    ir = int(math.floor(ux / dx - 0.5 * (jr % 2) + 0.5))
    best = 1e300
    bj = -1
    bi = -1
    for dj in range(-1, 2):
        for di in range(-1, 2):
            j = jr + dj - j0
            i = ir + di - i0
            if j < 0 or j >= nj or i < 0 or i >= ni:
                continue
            ex = cp[j, i, 0] - x
            ey = cp[j, i, 1] - y
            dd = ex * ex + ey * ey
            if dd < best:
                best = dd
                bj = j
                bi = i
    return bj, bi


@njit(inline="always")
def _pixel_nb(x, y, C0, C1, C2, pix, inv, optics, basis, nrays, seed_h, cosk, sink):
    p = inv[1]
    F = optics[0]
    f = optics[1]
    rml = optics[2]
    rmain2 = optics[3]
    a = optics[4]
    rap2 = optics[5]
    px = (x - inv[2]) * p
    py = (y - inv[3]) * p
    pz = -F - f
    e1x, e1y, e1z = basis[0, 0], basis[0, 1], basis[0, 2]
    e2x, e2y, e2z = basis[1, 0], basis[1, 1], basis[1, 2]
    nx, ny, nz = basis[2, 0], basis[2, 1], basis[2, 2]
    hp = _mix64(seed_h + np.uint64(pix) * np.uint64(_INC))
    h2 = _mix64(hp ^ np.uint64(_K3))
    u1 = float(hp >> np.uint64(11)) * _INV53
    u2 = float(h2 >> np.uint64(11)) * _INV53
    cr = math.cos(2.0 * math.pi * u2)
    sr = math.sin(2.0 * math.pi * u2)
    acc = 0.0
    for k in range(nrays):
        rr = rml * math.sqrt((k + u1) / nrays)
        ct = rr * (cosk[k] * cr - sink[k] * sr)
        st = rr * (sink[k] * cr + cosk[k] * sr)
        lx = C0 + ct * e1x + st * e2x
        ly = C1 + ct * e1y + st * e2y
        lz = C2 + ct * e1z + st * e2z
        vx = lx - px
        vy = ly - py
        vz = lz - pz
        vlen = math.sqrt(vx * vx + vy * vy + vz * vz)
        cphi = vz / vlen
        s = f / (vx * nx + vy * ny + vz * nz)
        ox = C0 + vx * s - lx
        oy = C1 + vy * s - ly
        oz = C2 + vz * s - lz
        t = -lz / oz
        mx = lx + t * ox
        my = ly + t * oy
        if mx * mx + my * my > rmain2:
            continue
        qx = ox * F / oz
        qy = oy * F / oz
        t2 = a / F
        ax = mx + t2 * (qx - mx)
        ay = my + t2 * (qy - my)
        if ax * ax + ay * ay > rap2:
            continue
        c2 = cphi * cphi
        acc += c2 * c2
    return acc / nrays


@njit(parallel=True)
def render_numba(cen, cp, inv, i0, j0, optics, basis, x0, y0, out, owner, sensor_w, nrays, seed):
    h, w = out.shape
    ni = cp.shape[1]
    seed_h = _mix64(np.uint64(seed) * np.uint64(_INC) + np.uint64(1))
    cosk = np.empty(nrays)
    sink = np.empty(nrays)
    for k in range(nrays):
        th = k * GOLDEN
        th = 2.0 * math.pi * (th - math.floor(th))
        cosk[k] = math.cos(th)
        sink[k] = math.sin(th)
    for r in prange(h):
        y = y0 + r
        for c in range(w):
            x = x0 + c
            bj, bi = _owner_nb(float(x), float(y), cp, inv, i0, j0)
            if bj < 0:
                out[r, c] = 0.0
                owner[r, c] = -1
                continue
            owner[r, c] = bj * ni + bi
            pix = y * sensor_w + x
            out[r, c] = _pixel_nb(float(x), float(y), cen[bj, bi, 0], cen[bj, bi, 1],
                                  cen[bj, bi, 2], pix, inv, optics, basis, nrays, seed_h,
                                  cosk, sink)


# numpy twin -------------------------------------------------------------------

def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def owner_numpy(x: np.ndarray, y: np.ndarray, cp: np.ndarray, inv: np.ndarray, i0: int, j0: int
                ) -> tuple[np.ndarray, np.ndarray]:
    nj, ni = cp.shape[:2]
    lam0, p, cx, cy, ox, oy, ca, sa, dx, dy = inv
    X = (x - cx) * p / lam0
    Y = (y - cy) * p / lam0
    ux = ca * X + sa * Y - ox
    uy = -sa * X + ca * Y - oy
    jr = np.floor(uy / dy + 0.5).astype(np.int64)
    ir = np.floor(ux / dx - 0.5 * np.mod(jr, 2) + 0.5).astype(np.int64)
    best = np.full(x.shape, np.inf)
    bj = np.full(x.shape, -1, dtype=np.int64)
    bi = np.full(x.shape, -1, dtype=np.int64)
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            j = jr + dj - j0
            i = ir + di - i0
            ok = (j >= 0) & (j < nj) & (i >= 0) & (i < ni)
            jc = np.clip(j, 0, nj - 1)
            ic = np.clip(i, 0, ni - 1)
            dd = (cp[jc, ic, 0] - x) ** 2 + (cp[jc, ic, 1] - y) ** 2
            dd = np.where(ok, dd, np.inf)
            better = dd < best
            best = np.where(better, dd, best)
            bj = np.where(better, j, bj)
            bi = np.where(better, i, bi)
    return bj, bi


def _golden_angles(nrays: int) -> tuple[np.ndarray, np.ndarray]:
    th = np.arange(nrays) * GOLDEN
    th = 2.0 * np.pi * (th - np.floor(th))
    return np.cos(th)[None, :], np.sin(th)[None, :]


def _pixels_numpy(x, y, C, pix, inv, optics, basis, nrays, seed_h):
    p = inv[1]
    F, f, rml, rmain2, a, rap2 = optics
    P = np.stack([(x - inv[2]) * p, (y - inv[3]) * p, np.full(x.shape, -F - f)], axis=-1)
    hp = _mix64_np(seed_h + pix.astype(np.uint64) * np.uint64(_INC))
    h2 = _mix64_np(hp ^ np.uint64(_K3))
    u1 = ((hp >> np.uint64(11)).astype(np.float64) * _INV53)[:, None]
    u2 = ((h2 >> np.uint64(11)).astype(np.float64) * _INV53)[:, None]
    cosk, sink = _golden_angles(nrays)
    cr = np.cos(2.0 * np.pi * u2)
    sr = np.sin(2.0 * np.pi * u2)
    kf = np.arange(nrays, dtype=np.float64)[None, :]
    rr = rml * np.sqrt((kf + u1) / nrays)
    ct = rr * (cosk * cr - sink * sr)
    st = rr * (sink * cr + cosk * sr)
    e1, e2, n = basis
    L = C[:, None, :] + ct[..., None] * e1 + st[..., None] * e2
    v = L - P[:, None, :]
    vlen = np.sqrt(np.sum(v * v, axis=-1))
    cphi = v[..., 2] / vlen
    s = f / (v @ n)
    o = C[:, None, :] + v * s[..., None] - L
    t = -L[..., 2] / o[..., 2]
    mx = L[..., 0] + t * o[..., 0]
    my = L[..., 1] + t * o[..., 1]
    ok = mx * mx + my * my <= rmain2
    qx = o[..., 0] * F / o[..., 2]
    qy = o[..., 1] * F / o[..., 2]
    t2 = a / F
    ax = mx + t2 * (qx - mx)
    ay = my + t2 * (qy - my)
    ok &= ax * ax + ay * ay <= rap2
    w = np.where(ok, cphi ** 4, 0.0)
    # sequential accumulation keeps the sum order of the compiled kernel
    acc = np.zeros(x.shape)
    for kk in range(nrays):
        acc += w[:, kk]
    return acc / nrays


def render_numpy(cen, cp, inv, i0, j0, optics, basis, x0, y0, out, owner, sensor_w, nrays, seed,
                 block: int = 4096):
    h, w = out.shape
    ni = cp.shape[1]
    seed_h = _mix64_np(np.array([seed], dtype=np.uint64) * np.uint64(_INC) + np.uint64(1))[0]
    yy, xx = np.mgrid[y0:y0 + h, x0:x0 + w]
    xs = xx.ravel().astype(np.float64)
    ys = yy.ravel().astype(np.float64)
    flat_out = out.reshape(-1)
    flat_own = owner.reshape(-1)
    for start in range(0, xs.size, block):
        sl = slice(start, start + block)
        x = xs[sl]
        y = ys[sl]
        bj, bi = owner_numpy(x, y, cp, inv, i0, j0)
        valid = bj >= 0
        vals = np.zeros(x.shape)
        if valid.any():
            C = cen[bj[valid], bi[valid]]
            pix = (y[valid].astype(np.int64) * sensor_w + x[valid].astype(np.int64))
            vals[valid] = _pixels_numpy(x[valid], y[valid], C, pix, inv, optics, basis, nrays,
                                        seed_h)
        flat_out[sl] = vals
        flat_own[sl] = np.where(valid, bj * ni + bi, -1)
