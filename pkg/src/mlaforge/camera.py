"""Physical camera model: microlens lattice, its projections and tolerance bounds.

Units: lengths are micrometres internally. The main focal length, aperture
distance and aperture radius are configured in millimetres and converted on
use. Sensor coordinates are pixels with pixel (0, 0) centred at (0.0, 0.0),
so the sensor centre sits at ((s_x - 1) / 2, (s_y - 1) / 2). Images are
indexed ``img[y, x]``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

BAYER_PATTERNS = ("RGGB", "GRBG", "GBRG", "BGGR")
SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class CameraConfig:
    """Physical description of sensor, microlens array, main lens and noise.

    Defaults describe a Lytro Illum-like camera with a 30 mm main lens.
    """

    sensor_px: tuple[int, int] = (7728, 5368)
    pixel_pitch_um: float = 1.4
    bit_depth: int = 10
    gamma_encode: float = 0.4
    ml_diameter_um: float = 20.0
    ml_focal_um: float = 40.0
    main_focal_mm: float = 30.0
    grid_rotation_deg: float = 0.0
    tilt_deg: tuple[float, float] = (0.0, 0.0)
    grid_offset_um: tuple[float, float] = (0.0, 0.0)
    grid_noise_px: float = 0.0143
    aperture_distance_mm: float = 120.0
    aperture_radius_mm: float = math.inf
    image_noise_sigma: float = 0.0
    bayer_pattern: str = "GRBG"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "sensor_px", tuple(int(v) for v in self.sensor_px))
        object.__setattr__(self, "tilt_deg", tuple(float(v) for v in self.tilt_deg))
        object.__setattr__(self, "grid_offset_um", tuple(float(v) for v in self.grid_offset_um))
        self.validate()

    def validate(self) -> None:
        sx, sy = self.sensor_px
        if sx <= 0 or sy <= 0:
            raise ValueError(f"sensor_px must be positive, got {self.sensor_px}")
        for name in ("pixel_pitch_um", "ml_diameter_um", "ml_focal_um", "main_focal_mm",
                     "aperture_distance_mm", "aperture_radius_mm"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if self.grid_noise_px < 0:
            raise ValueError("grid_noise_px must be >= 0")
        if self.image_noise_sigma < 0:
            raise ValueError("image_noise_sigma must be >= 0")
        if not abs(self.grid_rotation_deg) < 30.0:
            raise ValueError("|grid_rotation_deg| must be < 30")
        if not 8 <= self.bit_depth <= 16:
            raise ValueError("bit_depth must lie in [8, 16]")
        if not 0 < self.gamma_encode <= 1:
            raise ValueError("gamma_encode must lie in (0, 1]")
        if self.bayer_pattern not in BAYER_PATTERNS:
            raise ValueError(f"bayer_pattern must be one of {BAYER_PATTERNS}")
        if len(self.tilt_deg) != 2 or len(self.grid_offset_um) != 2:
            raise ValueError("tilt_deg and grid_offset_um need two components")

    # derived quantities
    @property
    def main_focal_um(self) -> float:
        return self.main_focal_mm * 1000.0

    @property
    def spacing_px(self) -> float:
        """Microlens pitch on the sensor in pixels, ignoring projection."""
        return self.ml_diameter_um / self.pixel_pitch_um

    @property
    def sensor_um(self) -> tuple[float, float]:
        return (self.sensor_px[0] * self.pixel_pitch_um, self.sensor_px[1] * self.pixel_pitch_um)

    @property
    def sensor_center_px(self) -> tuple[float, float]:
        return ((self.sensor_px[0] - 1) / 2.0, (self.sensor_px[1] - 1) / 2.0)

    @property
    def axis_lambda(self) -> float:
        """Projection scale (F + f) / F of an untilted lens."""
        return (self.main_focal_um + self.ml_focal_um) / self.main_focal_um

    def replace(self, **changes) -> "CameraConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["sensor_px"] = list(self.sensor_px)
        out["tilt_deg"] = list(self.tilt_deg)
        out["grid_offset_um"] = list(self.grid_offset_um)
        if math.isinf(self.aperture_radius_mm):
            out["aperture_radius_mm"] = "inf"
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CameraConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown camera fields: {sorted(unknown)}")
        kwargs = dict(data)
        if "aperture_radius_mm" in kwargs:
            kwargs["aperture_radius_mm"] = float(kwargs["aperture_radius_mm"])
        return cls(**kwargs)


def rotation_matrix(alpha_deg: float, beta_deg: float = 0.0, gamma_deg: float = 0.0) -> np.ndarray:
    """Return R = Rx(gamma) @ Ry(beta) @ Rz(alpha) (z applied first)."""
    a, b, g = np.deg2rad([alpha_deg, beta_deg, gamma_deg])
    rz = np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[np.cos(b), 0.0, np.sin(b)], [0.0, 1.0, 0.0], [-np.sin(b), 0.0, np.cos(b)]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, np.cos(g), -np.sin(g)], [0.0, np.sin(g), np.cos(g)]])
    return rx @ ry @ rz


def config_rotation(config: CameraConfig) -> np.ndarray:
    beta, gamma = config.tilt_deg
    return rotation_matrix(config.grid_rotation_deg, beta, gamma)


def solve_extent_corner(rot: np.ndarray, corner: tuple[float, float]) -> np.ndarray:
    """Solve R @ (w, h, 0) = (corner_x, corner_y, z) for (w, h).

    Raises:
        ValueError: if the in-plane part of ``rot`` is singular.
    """
    m = rot[:2, :2]
    det = float(np.linalg.det(m))
    # cos(beta) * cos(gamma); a near-zero value means the array is seen edge-on
    if abs(det) < 1e-4:
        raise ValueError("singular configuration: microlens plane nearly parallel to the optical axis")
    return np.linalg.solve(m, np.asarray(corner, dtype=float))


def mla_extent(config: CameraConfig) -> tuple[float, float]:
    """Physical (w, h) of the microlens array needed to cover the sensor.

    The extent equation is solved for every sensor corner and the largest
    magnitudes are kept, so the rectangle covers the sensor for any
    in-plane rotation. At zero rotation this is the sensor size itself.
    """
    rot = config_rotation(config)
    sx, sy = config.sensor_um
    sols = np.array([solve_extent_corner(rot, (cx * sx, cy * sy))
                     for cx in (-1.0, 1.0) for cy in (-1.0, 1.0)])
    w, h = np.abs(sols).max(axis=0)
    return float(w), float(h)


def lattice_xy(i: np.ndarray, j: np.ndarray, d: float) -> tuple[np.ndarray, np.ndarray]:
    """Ideal hex lattice positions for integer indices, odd rows shifted by d/2."""
    i = np.asarray(i)
    j = np.asarray(j)
    x = (i + 0.5 * np.mod(j, 2)) * d
    y = j * (SQRT3 / 2.0) * d
    return x.astype(float), y.astype(float)


@dataclass
class LensIndexBox:
    """Rectangular range of lattice indices, i in [i0, i0 + ni), j in [j0, j0 + nj)."""

    i0: int
    j0: int
    ni: int
    nj: int

    def indices(self) -> tuple[np.ndarray, np.ndarray]:
        jj, ii = np.meshgrid(np.arange(self.j0, self.j0 + self.nj),
                             np.arange(self.i0, self.i0 + self.ni), indexing="ij")
        return ii.ravel(), jj.ravel()


def index_box(config: CameraConfig) -> LensIndexBox:
    w, h = mla_extent(config)
    d = config.ml_diameter_um
    ox, oy = config.grid_offset_um
    half_i = math.ceil((w / 2 + abs(ox)) / d) + 2
    half_j = math.ceil((h / 2 + abs(oy)) / (SQRT3 / 2 * d)) + 2
    return LensIndexBox(-half_i, -half_j, 2 * half_i + 1, 2 * half_j + 1)


def generate_ideal_centers(config: CameraConfig, rng: np.random.Generator | None = None
                           ) -> tuple[np.ndarray, np.ndarray, LensIndexBox]:
    """Noisy ideal lattice in the unrotated array frame.

    Grid noise is an isotropic 2D Gaussian with per-axis standard deviation
    sigma_g / sqrt(2), so the RMS displacement magnitude equals sigma_g.

    Args:
        config: Camera configuration.
        rng: Random generator; defaults to one seeded with ``config.rng_seed``.

    Returns:
        ``(indices, c_id, box)`` where ``indices`` is (N, 2) integer (i, j),
        ``c_id`` is (N, 3) in micrometres with z = 0 and ``box`` describes the
        rectangular index layout (row-major over j, then i).
    """
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    box = index_box(config)
    ii, jj = box.indices()
    if ii.size == 0:
        raise ValueError("empty MLA")
    x, y = lattice_xy(ii, jj, config.ml_diameter_um)
    ox, oy = config.grid_offset_um
    c_id = np.zeros((ii.size, 3))
    c_id[:, 0] = x + ox
    c_id[:, 1] = y + oy
    if config.grid_noise_px > 0:
        std = config.grid_noise_px * config.pixel_pitch_um / math.sqrt(2.0)
        c_id[:, :2] += rng.normal(0.0, std, size=(ii.size, 2))
    return np.column_stack([ii, jj]), c_id, box


def transform_centers(ideal: np.ndarray, config: CameraConfig) -> np.ndarray:
    """Rotate ideal centers by R and shift them to z = -F."""
    ideal = np.asarray(ideal, dtype=float)
    out = ideal @ config_rotation(config).T
    out[..., 2] -= config.main_focal_um
    return out


def _check_behind(centers: np.ndarray) -> None:
    if np.any(centers[..., 2] >= 0):
        raise ValueError("microlens center with z >= 0 lies in front of the exit pupil")


def um_to_px(xy_um: np.ndarray, config: CameraConfig) -> np.ndarray:
    cx, cy = config.sensor_center_px
    out = np.asarray(xy_um, dtype=float)[..., :2] / config.pixel_pitch_um
    return out + np.array([cx, cy])


def px_to_um(xy_px: np.ndarray, config: CameraConfig) -> np.ndarray:
    cx, cy = config.sensor_center_px
    return (np.asarray(xy_px, dtype=float) - np.array([cx, cy])) * config.pixel_pitch_um


def project_perspective(centers: np.ndarray, config: CameraConfig) -> tuple[np.ndarray, np.ndarray]:
    """Project centers through the exit-pupil centre onto the sensor plane.

    Returns:
        ``(cp_px, lam)``: sensor pixel coordinates (N, 2) and scale factors (N,).
    """
    centers = np.asarray(centers, dtype=float)
    _check_behind(centers)
    z_sensor = -(config.main_focal_um + config.ml_focal_um)
    lam = z_sensor / centers[..., 2]
    return um_to_px(centers[..., :2] * lam[..., None], config), lam


def project_orthogonal(centers: np.ndarray, config: CameraConfig) -> np.ndarray:
    """Drop centers perpendicularly onto the sensor (pixel coordinates)."""
    centers = np.asarray(centers, dtype=float)
    _check_behind(centers)
    return um_to_px(centers[..., :2], config)


@dataclass
class MlaGroundTruth:
    """Per-lens geometry plus the true grid parameters in sensor pixels.

    Arrays cover the full rectangular index box; ``visible`` marks lenses
    whose perspective center lies on the sensor or within one lens of it.
    """

    config: CameraConfig
    box: LensIndexBox
    indices: np.ndarray
    ideal: np.ndarray
    centers: np.ndarray
    perspective_px: np.ndarray
    orthogonal_px: np.ndarray
    lam: np.ndarray
    visible: np.ndarray
    extent_um: tuple[float, float]
    meta: dict = field(default_factory=dict)

    @property
    def spacing_px(self) -> float:
        """Regular-grid spacing of the perspective centers on the sensor."""
        return self.config.axis_lambda * self.config.spacing_px

    @property
    def rotation_deg(self) -> float:
        return self.config.grid_rotation_deg

    @property
    def offset_px(self) -> np.ndarray:
        """Position of lens (0, 0) of the noise-free grid relative to the sensor centre."""
        rot = config_rotation(self.config)
        o = rot @ np.array([*self.config.grid_offset_um, 0.0])
        return o[:2] * self.config.axis_lambda / self.config.pixel_pitch_um

    def visible_perspective(self) -> np.ndarray:
        return self.perspective_px[self.visible]

    def grid_dict(self) -> dict:
        return {
            "spacing_px": self.spacing_px,
            "rotation_deg": self.rotation_deg,
            "offset_px": [float(v) for v in self.offset_px],
            "tilt_deg": list(self.config.tilt_deg),
            "grid_offset_um": list(self.config.grid_offset_um),
            "ml_diameter_um": self.config.ml_diameter_um,
            "mla_extent_um": list(self.extent_um),
        }


def ground_truth(config: CameraConfig, rng: np.random.Generator | None = None) -> MlaGroundTruth:
    """Generate, transform and project the full microlens array."""
    indices, ideal, box = generate_ideal_centers(config, rng)
    centers = transform_centers(ideal, config)
    cp, lam = project_perspective(centers, config)
    co = project_orthogonal(centers, config)
    margin = config.spacing_px
    sx, sy = config.sensor_px
    visible = ((cp[:, 0] >= -margin) & (cp[:, 0] <= sx - 1 + margin)
               & (cp[:, 1] >= -margin) & (cp[:, 1] <= sy - 1 + margin))
    if not visible.any():
        raise ValueError("empty MLA")
    return MlaGroundTruth(config, box, indices, ideal, centers, cp, co, lam, visible,
                          mla_extent(config))


@dataclass(frozen=True)
class AccuracyBounds:
    """Analytic tolerances of the camera model and the grid-estimation targets."""

    delta_f_um: float
    delta_tilt_deg: float
    delta_d_max_px: tuple[float, float]
    spacing_bound_px: float
    rotation_bound_deg: float
    offset_bound_px: float
    i_max: int
    j_max: int
    l_max: int

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["delta_d_max_px"] = list(self.delta_d_max_px)
        return out


def _bisect(fn, lo: float, hi: float, tol: float = 1e-15, maxiter: int = 200) -> float:
    flo = fn(lo)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        fmid = fn(mid)
        if (fmid > 0) == (flo > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
        if hi - lo < tol * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


def tilt_tolerance_rad(config: CameraConfig) -> float:
    """Largest tilt whose first- plus third-order z-displacement stays below p*f/d."""
    sx, sy = config.sensor_um
    target = config.pixel_pitch_um * config.ml_focal_um / config.ml_diameter_um

    def residual(t: float) -> float:
        return t * (sx + sy) + t ** 3 * (5.0 * sx / 6.0 + sy / 3.0) - target

    hi = target / (sx + sy) * 2.0 + 1e-12
    return _bisect(residual, 0.0, hi)


def _local_spacing_distortion(config: CameraConfig, i_max: int, j_max: int, tilt_deg: float
                              ) -> tuple[float, float]:
    """Spacing difference between opposite sensor corners under a worst-case tilt."""
    cfg = config.replace(tilt_deg=(tilt_deg, tilt_deg), grid_rotation_deg=0.0,
                         grid_offset_um=(0.0, 0.0), grid_noise_px=0.0)
    rot = config_rotation(cfg)
    d = cfg.ml_diameter_um

    def cp(i: int, j: int) -> np.ndarray:
        x, y = lattice_xy(np.array([i]), np.array([j]), d)
        c = transform_centers(np.array([[x[0], y[0], 0.0]]), cfg)
        return project_perspective(c, cfg)[0][0]

    assert rot.shape == (3, 3)
    dx_pos = np.linalg.norm(cp(i_max, j_max) - cp(i_max - 1, j_max))
    dx_neg = np.linalg.norm(cp(-i_max, -j_max) - cp(-(i_max - 1), -j_max))
    dy_pos = SQRT3 / 2.0 * np.linalg.norm(cp(i_max, j_max) - cp(i_max, j_max - 1))
    dy_neg = SQRT3 / 2.0 * np.linalg.norm(cp(-i_max, -j_max) - cp(-i_max, -(j_max - 1)))
    return float(abs(dx_pos - dx_neg)), float(abs(dy_pos - dy_neg))


def accuracy_bounds(config: CameraConfig) -> AccuracyBounds:
    """Compute the model tolerances and grid-estimation accuracy targets."""
    p, d, f = config.pixel_pitch_um, config.ml_diameter_um, config.ml_focal_um
    sx, sy = config.sensor_px
    d_px = d / p
    i_max = math.ceil(sx / (2.0 * d_px))
    j_max = math.ceil(sy / (2.0 * d_px * SQRT3 / 2.0))
    l_max = max(i_max, j_max)
    tilt = math.degrees(tilt_tolerance_rad(config))
    ddx, ddy = _local_spacing_distortion(config, i_max, j_max, tilt)
    return AccuracyBounds(
        delta_f_um=p * f / d,
        delta_tilt_deg=tilt,
        delta_d_max_px=(ddx, ddy),
        spacing_bound_px=0.5 / l_max,
        rotation_bound_deg=math.degrees(math.asin(0.5 * p / (i_max * d))),
        offset_bound_px=0.5,
        i_max=i_max,
        j_max=j_max,
        l_max=l_max,
    )
