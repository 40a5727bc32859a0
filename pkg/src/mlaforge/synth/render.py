"""Ray-traced white images with natural and mechanical vignetting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import _accel
from ..camera import CameraConfig, MlaGroundTruth, config_rotation, ground_truth
from . import _kernels


@dataclass
class WhiteImage:
    """A white image raster with its sensor-level metadata.

    ``samples`` holds normalized floats in [0, 1] when ``bit_depth`` is None,
    otherwise integer raw values in [0, 2**bit_depth - 1].
    """

    samples: np.ndarray
    mosaiced: bool = False
    bayer_pattern: str | None = None
    bit_depth: int | None = None
    metadata_ref: str | None = None

    @property
    def height(self) -> int:
        return int(self.samples.shape[0])

    @property
    def width(self) -> int:
        return int(self.samples.shape[1])

    def normalized(self) -> np.ndarray:
        """Samples as float32 in [0, 1]."""
        if self.bit_depth is None:
            return np.asarray(self.samples, dtype=np.float32)
        return self.samples.astype(np.float32) / np.float32(2 ** self.bit_depth - 1)


@dataclass
class SynthesisParams:
    rays_per_pixel: int = 128
    rng_seed: int = 0
    color_response: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self) -> None:
        if int(self.rays_per_pixel) < 1:
            raise ValueError("rays_per_pixel must be >= 1")
        self.rays_per_pixel = int(self.rays_per_pixel)
        self.color_response = np.asarray(self.color_response, dtype=float)
        if self.color_response.shape != (3, 3):
            raise ValueError("color_response must be a 3x3 matrix")


@dataclass
class RenderInputs:
    """Packed arrays consumed by the tracing kernels."""

    cen: np.ndarray
    cp: np.ndarray
    inv: np.ndarray
    i0: int
    j0: int
    optics: np.ndarray
    basis: np.ndarray
    sensor_w: int


def pack_inputs(config: CameraConfig, truth: MlaGroundTruth) -> RenderInputs:
    box = truth.box
    cen = np.ascontiguousarray(truth.centers.reshape(box.nj, box.ni, 3))
    cp = np.ascontiguousarray(truth.perspective_px.reshape(box.nj, box.ni, 2))
    a = math.radians(config.grid_rotation_deg)
    cx, cy = config.sensor_center_px
    d = config.ml_diameter_um
    inv = np.array([config.axis_lambda, config.pixel_pitch_um, cx, cy,
                    config.grid_offset_um[0], config.grid_offset_um[1],
                    math.cos(a), math.sin(a), d, d * math.sqrt(3.0) / 2.0])
    F = config.main_focal_um
    f = config.ml_focal_um
    # f-number matching: main-lens aperture radius F / (2 N) with N = f / d
    r_main = F * d / (2.0 * f)
    r_ap = config.aperture_radius_mm * 1000.0
    optics = np.array([F, f, d / 2.0, r_main ** 2, config.aperture_distance_mm * 1000.0,
                       r_ap ** 2 if math.isfinite(r_ap) else np.inf])
    rot = config_rotation(config)
    basis = np.ascontiguousarray(rot.T)  # rows: R e_x, R e_y, R e_z
    return RenderInputs(cen, cp, inv, box.i0, box.j0, optics, basis, config.sensor_px[0])


def trace_window(inputs: RenderInputs, window: tuple[int, int, int, int], rays_per_pixel: int,
                 seed: int, backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Trace the pixel window (x0, y0, width, height) without normalization.

    Returns:
        ``(values, owner)`` where ``owner`` holds the flat index of the owning
        lens in the truth index box, or -1.
    """
    x0, y0, w, h = (int(v) for v in window)
    out = np.zeros((h, w))
    owner = np.zeros((h, w), dtype=np.int32)
    if backend is None:
        backend = "numba" if _accel.use_numba() else "numpy"
    fn = _kernels.render_numba if backend == "numba" else _kernels.render_numpy
    fn(inputs.cen, inputs.cp, inputs.inv, inputs.i0, inputs.j0, inputs.optics, inputs.basis,
       x0, y0, out, owner, inputs.sensor_w, rays_per_pixel, int(seed))
    return out, owner


def render_white_image(config: CameraConfig, params: SynthesisParams | None = None,
                       truth: MlaGroundTruth | None = None, return_owner: bool = False):
    """Render a linear, unmosaiced white image of the full sensor.

    Each pixel belongs to the lens with the nearest perspective center. Rays
    from the pixel center through the lens disc are refracted by the
    microlens and main lens, clipped by the main-lens and object-side
    apertures, and weighted by cos^4 of their angle on the sensor side.

    Args:
        config: Camera configuration.
        params: Sampling parameters.
        truth: Precomputed ground truth for ``config``.
        return_owner: Also return the per-pixel owning-lens index map.

    Returns:
        ``(WhiteImage, MlaGroundTruth)`` or, with ``return_owner``, a third
        item with the owner map.
    """
    params = params or SynthesisParams()
    truth = truth if truth is not None else ground_truth(config)
    inputs = pack_inputs(config, truth)
    sx, sy = config.sensor_px
    values, owner = trace_window(inputs, (0, 0, sx, sy), params.rays_per_pixel, params.rng_seed)
    peak = values.max()
    if peak > 0:
        values /= peak
    image = WhiteImage(values.astype(np.float32))
    if return_owner:
        return image, truth, owner
    return image, truth


def outermost_lens(truth: MlaGroundTruth) -> int:
    """Index of the lens farthest from the axis whose image lies fully on the sensor."""
    cfg = truth.config
    r = cfg.spacing_px / 2.0 + 1.0
    sx, sy = cfg.sensor_px
    cp = truth.perspective_px
    inside = ((cp[:, 0] >= r) & (cp[:, 0] <= sx - 1 - r) & (cp[:, 1] >= r) & (cp[:, 1] <= sy - 1 - r))
    radius = np.hypot(truth.centers[:, 0], truth.centers[:, 1])
    radius = np.where(inside, radius, -1.0)
    return int(np.argmax(radius))


def lens_window(truth: MlaGroundTruth, lens: int, pad: float = 1.0) -> tuple[int, int, int, int]:
    cfg = truth.config
    half = cfg.spacing_px * cfg.axis_lambda / 2.0 + pad
    cx, cy = truth.perspective_px[lens]
    x0 = max(int(math.floor(cx - half)), 0)
    y0 = max(int(math.floor(cy - half)), 0)
    x1 = min(int(math.ceil(cx + half)), cfg.sensor_px[0] - 1)
    y1 = min(int(math.ceil(cy + half)), cfg.sensor_px[1] - 1)
    return x0, y0, x1 - x0 + 1, y1 - y0 + 1


def lens_energy(config: CameraConfig, truth: MlaGroundTruth, lens: int, rays_per_pixel: int = 64,
                seed: int = 0) -> float:
    inputs = pack_inputs(config, truth)
    values, owner = trace_window(inputs, lens_window(truth, lens), rays_per_pixel, seed)
    return float(values[owner == lens].sum())


APERTURE_LEVELS = {"none": 0.0, "mild": 0.5, "strong": 0.85}


def solve_aperture_radius(config: CameraConfig, blocked_fraction: float, rays_per_pixel: int = 64,
                          truth: MlaGroundTruth | None = None, tol_mm: float = 1e-4) -> float:
    """Aperture radius (mm) that blocks ``blocked_fraction`` of the outermost lens's light.

    The fraction is measured as lost energy of that lens's image relative to
    the unobstructed rendering. Solved by bisection; energy is monotone in
    the radius.
    """
    if blocked_fraction <= 0:
        return math.inf
    if not blocked_fraction < 1:
        raise ValueError("blocked_fraction must be < 1")
    truth = truth if truth is not None else ground_truth(config.replace(grid_noise_px=0.0))
    lens = outermost_lens(truth)
    free = lens_energy(config.replace(aperture_radius_mm=math.inf), truth, lens, rays_per_pixel)

    def blocked(radius_mm: float) -> float:
        e = lens_energy(config.replace(aperture_radius_mm=radius_mm), truth, lens, rays_per_pixel)
        return 1.0 - e / free

    lo, hi = 1e-3, config.main_focal_mm
    while blocked(hi) > 1e-6:
        hi *= 2.0
    while hi - lo > tol_mm:
        mid = 0.5 * (lo + hi)
        if blocked(mid) > blocked_fraction:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def aperture_radius_for_level(config: CameraConfig, level: str, rays_per_pixel: int = 64) -> float:
    if level not in APERTURE_LEVELS:
        raise ValueError(f"unknown aperture level {level!r}; expected one of {list(APERTURE_LEVELS)}")
    return solve_aperture_radius(config, APERTURE_LEVELS[level], rays_per_pixel)


def aperture_distance_mm(config: CameraConfig, shift_diameters: float = 1.75) -> float:
    """Object-side aperture distance giving comparable vignetting at any main focal length.

    A chief ray from the sensor corner leaves the main lens at an angle of
    about C_max / F, so at distance ``a`` its bundle is displaced by
    a C_max / F. The bundle radius is the main-lens aperture F d / (2 f).
    Choosing ``a = shift * d F^2 / (C_max f)`` makes the displacement
    ``2 * shift`` bundle radii for every F, so the named aperture levels
    clip the corner lenses while leaving the centre untouched. At F = 30 mm
    this gives about 120 mm.
    """
    if not shift_diameters > 0:
        raise ValueError("shift_diameters must be > 0")
    c_max = 0.5 * math.hypot(*config.sensor_um)
    a_um = (shift_diameters * config.ml_diameter_um * config.main_focal_um ** 2
            / (c_max * config.ml_focal_um))
    return a_um / 1000.0
