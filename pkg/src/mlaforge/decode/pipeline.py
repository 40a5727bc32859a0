"""Raw lenslet image to 4D light field: devignette, demosaic, align, slice, hex to rect."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..grid import GridModel
from ..io import write_png16
from ..synth.render import WhiteImage
from .align import align_to_grid, slice_patches
from .demosaic import demosaic_malvar, fill_masked
from .hexrect import GRADIENT_FACTOR, MODES, hex_to_rect

MASK_FRACTION = 0.01


@dataclass
class DecodeOptions:
    """Decoding settings.

    ``black_level`` and ``white_level`` are in raw units; ``gamma`` is the
    encoding exponent of the raw values. Unset values mean a white level of
    1 and linear data; the command line fills them from the raster's
    maximum code and the camera's encoding gamma.
    """

    black_level: float = 0.0
    white_level: float | None = None
    gamma: float | None = None
    patch_size: int | None = None
    resample_mode: str = "gradient"
    gradient_factor: float = GRADIENT_FACTOR
    demosaic: str = "malvar"
    bayer_pattern: str = "GRBG"
    rectify: bool = True
    max_rotation_deg: float = 5.0

    def __post_init__(self) -> None:
        if not self.black_level < self.white:
            raise ValueError("black level must be below the white level")
        if self.patch_size is not None and (self.patch_size < 3 or self.patch_size % 2 == 0):
            raise ValueError("patch size must be odd and >= 3")
        if self.resample_mode not in MODES:
            raise ValueError(f"resample_mode must be one of {MODES}")
        if self.demosaic not in ("malvar", "none"):
            raise ValueError("demosaic must be 'malvar' or 'none'")
        if not self.encoding_gamma > 0:
            raise ValueError("gamma must be > 0")

    @property
    def white(self) -> float:
        return 1.0 if self.white_level is None else float(self.white_level)

    @property
    def encoding_gamma(self) -> float:
        return 1.0 if self.gamma is None else float(self.gamma)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LightField:
    """Samples indexed ``(u, v, s, t, channel)`` with (u, v) inside a lens patch."""

    data: np.ndarray
    mask: np.ndarray
    shifted_rows: np.ndarray
    rectified: bool
    provenance: dict = field(default_factory=dict)

    @property
    def patch_size(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def subaperture(self, u: int, v: int) -> np.ndarray:
        """Image (t rows, s columns, channels) of one angular sample."""
        return np.transpose(self.data[u, v], (1, 0, 2))

    def subaperture_mask(self, u: int, v: int) -> np.ndarray:
        return self.mask[u, v].T


def _samples(img) -> tuple[np.ndarray, str | None]:
    if isinstance(img, WhiteImage):
        return np.asarray(img.samples, dtype=np.float32), img.bayer_pattern
    return np.asarray(img, dtype=np.float32), None


def linearize(raw: np.ndarray, options: DecodeOptions) -> np.ndarray:
    """Black/white level correction and gamma decoding to linear values in [0, 1]."""
    v = (np.asarray(raw, dtype=np.float32) - options.black_level) / (options.white
                                                                      - options.black_level)
    v = np.clip(v, 0.0, 1.0)
    if options.encoding_gamma != 1.0:
        v = v ** np.float32(1.0 / options.encoding_gamma)
    return v.astype(np.float32)


def devignette(raw, white, options: DecodeOptions) -> tuple[np.ndarray, np.ndarray]:
    """Divide by the white image: ``v = clip(raw / white, 0, 1)`` on linearized values.

    Pixels where the white image is below 1% of its maximum are masked and set to 0.

    Returns:
        ``(image, mask)``.

    Raises:
        ValueError: on size or Bayer-pattern mismatch.
    """
    r, rp = _samples(raw)
    w, wp = _samples(white)
    if r.shape != w.shape:
        raise ValueError(f"raw {r.shape} and white image {w.shape} differ in size")
    if rp is not None and wp is not None and rp != wp:
        raise ValueError(f"Bayer pattern mismatch: {rp} vs {wp}")
    r = linearize(r, options)
    w = linearize(w, options)
    mask = w < MASK_FRACTION * float(w.max())
    out = np.zeros_like(r)
    np.divide(r, w, out=out, where=~mask)
    return np.clip(out, 0.0, 1.0), mask


def ghosting(lf: LightField, ring: tuple[float, float] = (0.25, 0.4)) -> float:
    """Leakage of neighbouring lenses into peripheral angular samples.

    For a scene that is constant within every lens, all angular samples of
    a lens should equal its central sample. The metric is the mean of
    ``|L[u, v] - L[centre]|`` over the peripheral samples (distance from
    the patch centre in ``ring`` times the patch size) of every lens with a
    valid centre, divided by the mean central value. Masked peripheral
    samples count with value 0: a misplaced grid moves them into the dark
    gaps between lens images, and dropping them would hide that leakage.
    """
    p = lf.patch_size
    h = p // 2
    uu, vv = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    r = np.hypot(uu - h, vv - h)
    sel = (r >= ring[0] * p) & (r <= ring[1] * p)
    if not sel.any():
        raise ValueError("empty peripheral ring")
    centre_ok = ~lf.mask[h, h]
    if not centre_ok.any():
        raise ValueError("no lens with a valid centre sample")
    centre = lf.data[h, h][centre_ok]
    per = lf.data[sel][:, centre_ok]
    per = np.where(lf.mask[sel][:, centre_ok][..., None], 0.0, per)
    diff = np.abs(per - centre[None]).mean(axis=-1)
    level = float(centre.mean())
    return float(diff.mean() / level) if level > 0 else math.inf


def decode(raw, white, grid: GridModel, options: DecodeOptions | None = None,
           provenance: dict | None = None) -> LightField:
    """Devignette, demosaic, align to the grid, slice into patches and resample hex to rect.

    Args:
        raw: Mosaiced raw image (array or WhiteImage) in raw units.
        white: White image of the same size and Bayer pattern.
        grid: Grid estimated from ``white``.
        options: Decoding settings.
        provenance: Extra entries recorded with the light field (e.g. WI id).
    """
    options = options or DecodeOptions()
    t0 = time.perf_counter()
    img, mask = devignette(raw, white, options)
    if grid.sensor_px != (img.shape[1], img.shape[0]):
        raise ValueError(f"grid sensor size {grid.sensor_px} does not match image "
                         f"{img.shape[1]}x{img.shape[0]}")
    if options.demosaic == "malvar":
        rgb = np.clip(demosaic_malvar(fill_masked(img, mask), options.bayer_pattern), 0.0, 1.0)
    else:
        rgb = np.repeat(img[..., None], 3, axis=-1)
    del img
    aligned = align_to_grid(rgb, grid, mask, options.max_rotation_deg)
    del rgb
    data, lf_mask, layout = slice_patches(aligned, options.patch_size)
    shifted = layout.shifted_rows()
    prov = {"grid": grid.to_dict(), "options": options.to_dict(),
            "lattice": aligned.lattice.to_dict(),
            "layout": {"i_min": layout.i_min, "j_min": layout.j_min, "n_s": layout.n_s,
                       "n_t": layout.n_t},
            **(provenance or {})}
    del aligned
    if options.rectify:
        data, lf_mask = hex_to_rect(data, lf_mask, shifted, options.resample_mode,
                                    options.gradient_factor)
    prov["runtime_s"] = time.perf_counter() - t0
    return LightField(data, lf_mask, shifted, options.rectify, prov)


def write_light_field(lf: LightField, out_dir: str | Path, grid_id: str = "") -> Path:
    """Write one 16-bit PNG per angular sample, ``mask.npz`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = lf.patch_size
    q = lf.data.shape[1]
    files = []
    for u in range(p):
        for v in range(q):
            name = f"u{u:02d}_v{v:02d}.png"
            img = np.clip(np.rint(lf.subaperture(u, v) * 65535.0), 0, 65535).astype(np.uint16)
            write_png16(out / name, img)
            files.append(name)
    np.savez_compressed(out / "mask.npz", mask=lf.mask)
    manifest = {
        "dims": {"u": p, "v": q, "s": int(lf.data.shape[2]), "t": int(lf.data.shape[3]),
                 "channels": int(lf.data.shape[4])},
        "layout": "(u, v, s, t, channel); subaperture PNG rows are t, columns s",
        "rectified": lf.rectified,
        "shifted_rows": [bool(v) for v in lf.shifted_rows],
        "grid_id": grid_id,
        "mask_file": "mask.npz",
        "files": files,
        "provenance": lf.provenance,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
    return out


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")
