"""Fourier-domain estimation of microlens grid spacing and rotation.

The white image is contrast-stretched and gamma-compressed so every lens
image becomes a near-binary texel, windowed with a Gaussian and a radial
Hann window, and transformed. The lattice's reciprocal vectors appear as
harmonic peaks; their sub-bin centroids give the frequency basis, which is
inverted to the spatial basis. The three preprocessing hyperparameters are
tuned by differential evolution so that consecutive harmonics are as evenly
spaced as possible.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from .de import DEParams, differential_evolution

log = logging.getLogger(__name__)

STRETCH_HIGH = 0.99


@dataclass(frozen=True)
class Hyperparams:
    window_sigma: float
    gamma: float
    stretch_low: float

    def __post_init__(self) -> None:
        if not self.window_sigma > 0:
            raise ValueError("window_sigma must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.stretch_low < STRETCH_HIGH:
            raise ValueError(f"stretch_low must lie in (0, {STRETCH_HIGH})")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SearchSpace:
    window_sigma: tuple[float, float] = (30.0, 600.0)
    gamma: tuple[float, float] = (0.01, 0.5)
    stretch_low: tuple[float, float] = (0.05, 0.9)

    def bounds(self) -> list[tuple[float, float]]:
        return [tuple(self.window_sigma), tuple(self.gamma), tuple(self.stretch_low)]


def preprocess(img: np.ndarray, hp: Hyperparams) -> np.ndarray:
    """Map [q, 0.99] linearly onto [0, 1] with clipping, then apply v**gamma."""
    if hp.stretch_low >= STRETCH_HIGH:
        raise ValueError("stretch_low must be below the upper stretch bound")
    img = np.asarray(img, dtype=np.float32)
    scale = np.float32(1.0 / (STRETCH_HIGH - hp.stretch_low))
    out = (img - np.float32(hp.stretch_low)) * scale
    np.clip(out, 0.0, 1.0, out=out)
    np.power(out, np.float32(hp.gamma), out=out)
    return out


def window_profile(shape: tuple[int, int], sigma: float, center: tuple[float, float] | None = None,
                   hann_radius: float | None = None) -> np.ndarray:
    """Product of a Gaussian (std ``sigma``) and a radial Hann window, float32."""
    h, w = shape
    cx, cy = center if center is not None else ((w - 1) / 2.0, (h - 1) / 2.0)
    radius = hann_radius if hann_radius is not None else min(h, w) / 2.0
    x = np.arange(w, dtype=np.float64) - cx
    y = np.arange(h, dtype=np.float64) - cy
    gx = np.exp(-x * x / (2 * sigma * sigma)).astype(np.float32)
    gy = np.exp(-y * y / (2 * sigma * sigma)).astype(np.float32)
    r = np.sqrt(y[:, None].astype(np.float32) ** 2 + x[None, :].astype(np.float32) ** 2)
    hann = np.where(r < radius, 0.5 * (1.0 + np.cos(np.pi * r / np.float32(radius))), 0.0)
    return (gy[:, None] * gx[None, :]) * hann.astype(np.float32)


def apply_windows(img: np.ndarray, sigma: float, center: tuple[float, float] | None = None,
                  hann_radius: float | None = None) -> np.ndarray:
    """Multiply by a centred Gaussian window and a radial Hann window.

    Args:
        img: Image, indexed ``[y, x]``.
        sigma: Gaussian standard deviation in pixels.
        center: Window centre (x, y); defaults to the image centre.
        hann_radius: Hann radius; defaults to half the smaller image side.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    return np.asarray(img, dtype=np.float32) * window_profile(img.shape, sigma, center, hann_radius)


@dataclass
class Spectrum:
    """Magnitude of the real FFT over the half-plane f_y >= 0.

    ``magnitude[iy, ix]`` holds frequency ``((ix - nx // 2) / nx, iy / ny)`` in
    cycles per pixel; the x axis is shifted so DC sits at column ``nx // 2``.
    """

    magnitude: np.ndarray
    nx: int
    ny: int
    window_sigma: float | None = None

    def freq(self, ix, iy) -> np.ndarray:
        ix = np.asarray(ix, dtype=float)
        iy = np.asarray(iy, dtype=float)
        return np.stack([(ix - self.nx // 2) / self.nx, iy / self.ny], axis=-1)

    def bin_of(self, f) -> tuple[float, float]:
        return f[0] * self.nx + self.nx // 2, f[1] * self.ny

    @property
    def peak_width_bins(self) -> float:
        """Expected std of a spectral peak in bins (Gaussian window), or a default."""
        if self.window_sigma is None:
            return 1.0
        return self.nx / (2.0 * math.pi * self.window_sigma)

    def patch(self, ix0: int, iy0: int, half: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Square patch around a bin with Hermitian fill for f_y < 0 and zero outside.

        Returns:
            ``(values, ix, iy)`` with bin coordinates of every patch entry.
        """
        iy = np.arange(iy0 - half, iy0 + half + 1)
        ix = np.arange(ix0 - half, ix0 + half + 1)
        IY, IX = np.meshgrid(iy, ix, indexing="ij")
        mirror = IY < 0
        sy = np.where(mirror, -IY, IY)
        sx = np.where(mirror, (self.nx - IX) % self.nx, IX)
        ok = (sy < self.magnitude.shape[0]) & (sx >= 0) & (sx < self.nx)
        vals = np.zeros(IY.shape, dtype=np.float64)
        vals[ok] = self.magnitude[sy[ok], sx[ok]]
        return vals, IX, IY


def _even_fast_len(n: int) -> int:
    return 2 * sfft.next_fast_len(int(math.ceil(n / 2)), real=True)


def spectrum(img: np.ndarray, pad_factor: float = 2.0, window_sigma: float | None = None,
             workers: int | None = None) -> Spectrum:
    """Magnitude spectrum of the zero-padded image (f_y >= 0 half-plane)."""
    if pad_factor < 1:
        raise ValueError("pad_factor must be >= 1")
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape
    nx = _even_fast_len(int(math.ceil(pad_factor * w)))
    ny = _even_fast_len(int(math.ceil(pad_factor * h)))
    spec = sfft.rfftn(img, s=(nx, ny), axes=(1, 0), workers=workers)
    mag = np.abs(spec)
    mag = np.fft.fftshift(mag, axes=1)
    return Spectrum(mag, nx, ny, window_sigma)


def cluster_centroid(freqs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted centre of mass of frequency samples ``freqs`` (K, 2)."""
    freqs = np.asarray(freqs, dtype=float).reshape(-1, 2)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    total = weights.sum()
    if not total > 0:
        raise ValueError("cluster has no positive weight")
    return (freqs * weights[:, None]).sum(axis=0) / total


@dataclass
class FrequencyPeaks:
    """Harmonic peak centroids per basis direction, in cycles per pixel."""

    harmonics: list[np.ndarray]
    strengths: list[np.ndarray] = field(default_factory=list)

    @property
    def n_harmonics(self) -> int:
        return min(len(h) for h in self.harmonics)

    def gaps(self) -> list[np.ndarray]:
        return [np.hypot(*np.diff(h, axis=0).T) for h in self.harmonics]

    def spreads(self) -> tuple[float, float]:
        g = self.gaps()
        return tuple(float(np.std(x, ddof=1)) if x.size > 1 else math.nan for x in g)

    def fused(self) -> tuple[np.ndarray, np.ndarray]:
        """n-normalised mean of every direction's harmonics."""
        out = []
        for h in self.harmonics:
            n = np.arange(1, len(h) + 1, dtype=float)[:, None]
            out.append((h / n).mean(axis=0))
        return out[0], out[1]


@dataclass
class PeakOptions:
    expected_d_range: tuple[float, float] = (10.0, 30.0)
    n_harmonics: int = 5
    rel_threshold: float = 0.1
    snr_min: float = 4.0
    box_sigmas: float = 3.0
    hex_tolerance: float = 0.03
    angle_tolerance_deg: float = 2.0


def _local_max(spec: Spectrum, ix: float, iy: float, radius: int) -> tuple[int, int, float]:
    vals, IX, IY = spec.patch(int(round(ix)), int(round(iy)), radius)
    k = int(np.argmax(vals))
    return int(IX.flat[k]), int(IY.flat[k]), float(vals.flat[k])


def _cluster(spec: Spectrum, ix: int, iy: int, half: int, rel: float) -> tuple[np.ndarray, float]:
    vals, IX, IY = spec.patch(ix, iy, half)
    peak = vals[half, half]
    thr = rel * peak
    mask = vals > thr
    labels, _ = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    mask = labels == labels[half, half]
    weights = (vals - thr)[mask]
    freqs = spec.freq(IX[mask], IY[mask])
    return cluster_centroid(freqs, weights), float(peak)


def _background(spec: Spectrum, ix: float, iy: float, half: int) -> float:
    vals, _, _ = spec.patch(int(round(ix)), int(round(iy)), half)
    return float(np.median(vals))


def find_fundamentals(spec: Spectrum, opts: PeakOptions) -> tuple[np.ndarray, np.ndarray]:
    """Locate the two hex fundamentals f1 (angle in (0, 60]) and f2 (angle in (60, 120]).

    Raises:
        ValueError: "lattice not hexagonal" if the three upper-half-plane
            fundamentals are not equal in length and 60 degrees apart.
    """
    d_lo, d_hi = opts.expected_d_range
    f_lo = 2.0 / (math.sqrt(3.0) * d_hi) * 0.95
    f_hi = 2.0 / (math.sqrt(3.0) * d_lo) * 1.05
    n = spec.nx
    cx = n // 2
    r_hi = int(math.ceil(f_hi * n)) + 1
    y1 = min(r_hi + 1, spec.magnitude.shape[0])
    sub = spec.magnitude[:y1, max(cx - r_hi, 0):cx + r_hi + 1]
    IY, IX = np.mgrid[0:sub.shape[0], max(cx - r_hi, 0):max(cx - r_hi, 0) + sub.shape[1]]
    fr = np.hypot((IX - cx) / spec.nx, IY / spec.ny)
    masked = np.where((fr >= f_lo) & (fr <= f_hi), sub, -1.0)
    k = int(np.argmax(masked))
    if masked.flat[k] <= 0:
        raise ValueError("lattice not hexagonal: no peak in the expected frequency band")
    p = spec.freq(IX.flat[k], IY.flat[k])
    theta0 = math.degrees(math.atan2(p[1], p[0])) % 60.0
    if theta0 < 1e-9:
        theta0 = 60.0
    radius = float(np.hypot(*p))
    search = max(2, int(math.ceil(0.08 * radius * n)))
    found = []
    for step in range(3):
        ang = math.radians(theta0 + 60.0 * step)
        ix, iy = spec.bin_of((radius * math.cos(ang), radius * math.sin(ang)))
        bx, by, val = _local_max(spec, ix, iy, search)
        found.append((spec.freq(bx, by), val))
    lengths = np.array([np.hypot(*f) for f, _ in found])
    peak_vals = np.array([v for _, v in found])
    if np.ptp(lengths) > opts.hex_tolerance * lengths.mean() or peak_vals.min() < 0.1 * peak_vals.max():
        raise ValueError("lattice not hexagonal")
    angles = [math.degrees(math.atan2(f[1], f[0])) for f, _ in found]
    for a, b in zip(angles, angles[1:]):
        if abs((b - a) - 60.0) > opts.angle_tolerance_deg + math.degrees(1.5 / (radius * n)):
            raise ValueError("lattice not hexagonal")
    return found[0][0], found[1][0]


def detect_peaks(spec: Spectrum, expected_d_range: tuple[float, float] = (10.0, 30.0),
                 n_harmonics: int = 5, opts: PeakOptions | None = None) -> FrequencyPeaks:
    """Harmonic peak centroids along both fundamental directions.

    Each harmonic n*f_i is predicted from the running estimate of f_i, the
    local maximum near the prediction is taken, and the centroid of the
    connected bins above ``rel_threshold`` of that maximum is computed with
    weights equal to the excess over the threshold. Harmonics stop at the
    first one whose peak is not ``snr_min`` times the local median level.

    Raises:
        ValueError: if fewer than two harmonics survive in a direction, or
            the fundamentals are not hexagonal.
    """
    opts = opts or PeakOptions()
    opts = PeakOptions(**{**asdict(opts), "expected_d_range": tuple(expected_d_range),
                          "n_harmonics": int(n_harmonics)})
    rho = spec.peak_width_bins
    half = max(4, int(math.ceil(opts.box_sigmas * rho)) + 1)
    search = max(2, int(math.ceil(2 * rho)))
    f1, f2 = find_fundamentals(spec, opts)
    harmonics = []
    strengths = []
    for f in (f1, f2):
        est = np.asarray(f, dtype=float)
        pts = []
        vals = []
        bg_half = max(3 * half, int(0.3 * np.hypot(*f) * spec.nx))
        for order in range(1, opts.n_harmonics + 1):
            pred = order * est
            if abs(pred[0]) >= 0.5 or abs(pred[1]) >= 0.5:
                break
            ix, iy = spec.bin_of(pred)
            bx, by, val = _local_max(spec, ix, iy, search)
            if val < opts.snr_min * _background(spec, ix, iy, bg_half):
                break
            c, peak = _cluster(spec, bx, by, half, opts.rel_threshold)
            pts.append(c)
            vals.append(peak)
            n = np.arange(1, len(pts) + 1, dtype=float)[:, None]
            est = (np.array(pts) / n).mean(axis=0)
        if len(pts) < 2:
            raise ValueError("fewer than two harmonics detected")
        harmonics.append(np.array(pts))
        strengths.append(np.array(vals))
    return FrequencyPeaks(harmonics, strengths)


def freq_to_spatial(f1, f2) -> tuple[np.ndarray, np.ndarray]:
    """Spatial basis (columns of the inverse of the matrix with rows f1, f2)."""
    m = np.array([f1, f2], dtype=float)
    det = float(np.linalg.det(m))
    if abs(det) < 1e-12:
        raise ValueError("frequency vectors are collinear")
    inv = np.linalg.inv(m)
    return inv[:, 0], inv[:, 1]


def spread_objective(peaks: FrequencyPeaks) -> float:
    """Sum over both directions of the sample std of consecutive harmonic gaps."""
    if any(len(h) < 3 for h in peaks.harmonics):
        raise ValueError("spread needs at least three harmonics per direction")
    return float(sum(peaks.spreads()))


def spacing_rotation_from_basis(b1: np.ndarray, b2: np.ndarray) -> tuple[float, float]:
    """Spacing (mean basis length) and rotation (mean of angle(b1) and angle(b2) - 120)."""
    spacing = 0.5 * (float(np.hypot(*b1)) + float(np.hypot(*b2)))
    a1 = math.atan2(b1[1], b1[0])
    a2 = math.atan2(b2[1], b2[0]) - math.radians(120.0)
    mean = math.atan2(math.sin(a1) + math.sin(a2), math.cos(a1) + math.cos(a2))
    return spacing, math.degrees(mean)


@dataclass
class FourierOptions:
    peaks: PeakOptions = field(default_factory=PeakOptions)
    pad_factor: float = 2.0
    crop_sigmas: float = 5.0
    search_space: SearchSpace = field(default_factory=SearchSpace)
    de: DEParams = field(default_factory=DEParams)
    fft_workers: int | None = None


class FourierPipeline:
    """Objective evaluation on one white image for varying hyperparameters."""

    def __init__(self, img: np.ndarray, options: FourierOptions | None = None):
        self.img = np.asarray(img, dtype=np.float32)
        if self.img.ndim != 2:
            raise ValueError("white image must be 2D")
        self.options = options or FourierOptions()
        h, w = self.img.shape
        self.center = ((w - 1) / 2.0, (h - 1) / 2.0)
        self.hann_radius = min(h, w) / 2.0

    def crop(self, sigma: float) -> tuple[np.ndarray, tuple[float, float]]:
        half = min(self.options.crop_sigmas * sigma, self.hann_radius)
        cx, cy = self.center
        x0, x1 = int(math.ceil(cx - half)), int(math.floor(cx + half)) + 1
        y0, y1 = int(math.ceil(cy - half)), int(math.floor(cy + half)) + 1
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, self.img.shape[1]), min(y1, self.img.shape[0])
        return self.img[y0:y1, x0:x1], (cx - x0, cy - y0)

    def spectrum(self, hp: Hyperparams) -> Spectrum:
        sub, center = self.crop(hp.window_sigma)
        v = preprocess(sub, hp)
        v *= window_profile(v.shape, hp.window_sigma, center, self.hann_radius)
        return spectrum(v, self.options.pad_factor, hp.window_sigma, self.options.fft_workers)

    def peaks(self, hp: Hyperparams) -> FrequencyPeaks:
        p = self.options.peaks
        return detect_peaks(self.spectrum(hp), p.expected_d_range, p.n_harmonics, p)

    def objective(self, x: np.ndarray) -> tuple[float, FrequencyPeaks | None]:
        try:
            hp = Hyperparams(float(x[0]), float(x[1]), float(x[2]))
            peaks = self.peaks(hp)
            return spread_objective(peaks), peaks
        except ValueError as exc:
            log.debug("objective failed at %s: %s", x, exc)
            return math.inf, None


def optimize_hyperparams(img: np.ndarray, search_space: SearchSpace | None = None,
                         de_params: DEParams | None = None, options: FourierOptions | None = None
                         ) -> tuple[Hyperparams, FrequencyPeaks, float]:
    """Tune (sigma, gamma, q) by differential evolution on the spread objective.

    Returns:
        ``(hyperparams, peaks, objective)``.

    Raises:
        ValueError: "no lattice found" if every evaluated candidate fails.
    """
    options = options or FourierOptions()
    space = search_space or options.search_space
    params = de_params or options.de
    pipe = FourierPipeline(img, options)
    res = differential_evolution(pipe.objective, space.bounds(), params)
    if not math.isfinite(res.fun) or res.extra is None:
        raise ValueError("no lattice found")
    hp = Hyperparams(*map(float, res.x))
    log.info("DE finished after %d generations (%d evaluations), objective %.3g",
             res.generations, res.evaluations, res.fun)
    return hp, res.extra, res.fun


@dataclass
class SpacingRotation:
    spacing_px: float
    rotation_deg: float
    b1: np.ndarray
    b2: np.ndarray
    hyperparams: Hyperparams
    peaks: FrequencyPeaks
    objective: float
    runtime_s: float


def estimate_spacing_rotation(img: np.ndarray, options: FourierOptions | None = None,
                              hyperparams: Hyperparams | None = None) -> SpacingRotation:
    """Spacing and rotation of the microlens grid from a normalized white image.

    Args:
        img: Raw mosaiced white image scaled to [0, 1].
        options: Pipeline and optimiser settings.
        hyperparams: Fixed preprocessing parameters; skips the optimiser.

    Returns:
        Spacing (mean of |b1|, |b2|), rotation of b1 (the lattice vector
        closest to the x axis) in (-30, 30] degrees, and diagnostics.
    """
    options = options or FourierOptions()
    t0 = time.perf_counter()
    if hyperparams is None:
        hp, peaks, obj = optimize_hyperparams(img, options=options)
    else:
        hp = hyperparams
        peaks = FourierPipeline(img, options).peaks(hp)
        obj = spread_objective(peaks) if peaks.n_harmonics >= 3 else math.nan
    f1, f2 = peaks.fused()
    b1, b2 = freq_to_spatial(f1, f2)
    spacing, rotation = spacing_rotation_from_basis(b1, b2)
    return SpacingRotation(spacing, rotation, b1, b2, hp, peaks, obj, time.perf_counter() - t0)
