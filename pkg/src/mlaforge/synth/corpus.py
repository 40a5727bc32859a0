"""White-image corpus generation: parameter sweeps, rendering and the manifest."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..camera import CameraConfig, ground_truth
from ..io import write_ground_truth, write_pgm
from .render import (APERTURE_LEVELS, SynthesisParams, WhiteImage, aperture_distance_mm,
                     aperture_radius_for_level, render_white_image)
from .sensor import add_image_noise, encode_and_quantize, mosaic_bayer

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ["id", "F_mm", "aperture", "alpha_deg", "ox", "oy", "sigma_n", "img_path",
                   "gt_path", "sigma_g", "status", "scene_path"]

SCENE_RANGE = (0.2, 0.8)


@dataclass
class Sweep:
    """Cartesian sweep over focal length, aperture level, lattice variant and image noise.

    Variant ``k`` draws its rotation uniformly from ``[-alpha_range_deg, alpha_range_deg]``
    and its offset uniformly from ``[-d/2, d/2]^2`` (micrometres), using a
    generator seeded with ``seed``. ``grid_noise_px`` is cycled over the
    variants, so several grid noise levels can share one sweep.
    """

    focal_lengths_mm: list[float] = field(default_factory=lambda: [30.0, 47.0, 117.0, 249.0])
    apertures: list[str] = field(default_factory=lambda: ["none", "mild", "strong"])
    n_variants: int = 20
    noise_levels: list[float] = field(default_factory=lambda: [0.0, 0.002, 0.005, 0.01])
    grid_noise_px: list[float] = field(default_factory=lambda: [0.0143])
    alpha_range_deg: float = 0.3
    seed: int = 0
    rays_per_pixel: int = 128
    with_scene: bool = True
    camera: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for level in self.apertures:
            if level not in APERTURE_LEVELS:
                raise ValueError(f"unknown aperture level {level!r}")
        if self.n_variants < 1 or not self.focal_lengths_mm or not self.noise_levels:
            raise ValueError("sweep needs at least one focal length, variant and noise level")
        if not self.grid_noise_px:
            raise ValueError("grid_noise_px needs at least one value")
        if any(s < 0 for s in self.noise_levels):
            raise ValueError("noise levels must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "Sweep":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sweep fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def base_config(self) -> CameraConfig:
        return CameraConfig.from_dict(dict(self.camera))

    def variants(self) -> list[dict]:
        base = self.base_config()
        rng = np.random.default_rng(self.seed)
        half = base.ml_diameter_um / 2.0
        out = []
        for k in range(self.n_variants):
            alpha = float(rng.uniform(-self.alpha_range_deg, self.alpha_range_deg))
            ox, oy = (float(v) for v in rng.uniform(-half, half, size=2))
            out.append({
                "alpha_deg": alpha,
                "offset_um": (ox, oy),
                "grid_noise_px": float(self.grid_noise_px[k % len(self.grid_noise_px)]),
                "seed": int(rng.integers(0, 2 ** 31 - 1)),
            })
        return out

    def expand(self) -> list["CorpusEntry"]:
        """All manifest entries, grouped so each rendering is shared by its noise levels."""
        base = self.base_config()
        entries = []
        n = 0
        variants = self.variants()
        for fi, level, (vi, var) in itertools.product(self.focal_lengths_mm, self.apertures,
                                                      enumerate(variants)):
            cfg = base.replace(main_focal_mm=float(fi), grid_rotation_deg=var["alpha_deg"],
                               grid_offset_um=var["offset_um"],
                               grid_noise_px=var["grid_noise_px"], rng_seed=var["seed"])
            cfg = cfg.replace(aperture_distance_mm=aperture_distance_mm(cfg))
            group = f"F{float(fi):g}_{level}_v{vi:02d}"
            for ni, sigma in enumerate(self.noise_levels):
                entries.append(CorpusEntry(f"wi{n:04d}", group, cfg.replace(image_noise_sigma=float(sigma)),
                                           level, float(sigma), var["seed"] + 7919 * (ni + 1)))
                n += 1
        return entries


@dataclass
class CorpusEntry:
    id: str
    group: str
    config: CameraConfig
    aperture: str
    sigma_n: float
    noise_seed: int


def desk_sweep(seed: int = 0, rays_per_pixel: int = 64, camera: dict | None = None) -> Sweep:
    """The 24-image desk corpus: F in {30, 249} mm, mild/strong apertures, 3 variants, 2 noise levels.

    Variants 0 and 2 carry the nominal grid noise of 0.0143 px, variant 1 none,
    so the grid noise varies within the corpus.
    """
    return Sweep(focal_lengths_mm=[30.0, 249.0], apertures=["mild", "strong"], n_variants=3,
                 noise_levels=[0.0, 0.005], grid_noise_px=[0.0143, 0.0, 0.0143], seed=seed,
                 rays_per_pixel=rays_per_pixel, camera=dict(camera or {}))


def paper_sweep(seed: int = 0) -> Sweep:
    """Full-scale sweep: 4 focal lengths x 3 apertures x 20 variants x 4 noise levels."""
    return Sweep(seed=seed)


def _aperture_radius(cfg: CameraConfig, level: str, rays: int) -> float:
    # the physical aperture is a property of (F, level), not of the lattice variant
    nominal = cfg.replace(grid_rotation_deg=0.0, grid_offset_um=(0.0, 0.0), grid_noise_px=0.0,
                          aperture_radius_mm=math.inf)
    return aperture_radius_for_level(nominal, level, rays_per_pixel=min(rays, 64))


def scene_values(n_lenses: int, seed: int) -> np.ndarray:
    """Per-lens constant scene radiance drawn uniformly from ``SCENE_RANGE``."""
    rng = np.random.default_rng(seed)
    return rng.uniform(*SCENE_RANGE, size=n_lenses)


def lenslet_scene(white: np.ndarray, owner: np.ndarray, seed: int) -> np.ndarray:
    """Lenslet image of a scene that is constant within every microlens.

    Each lens images a flat patch of random brightness, so the ideal decoded
    light field is constant over (u, v) inside each lens. Leakage from a
    misplaced grid shows up as variation across (u, v).
    """
    values = scene_values(int(owner.max()) + 1, seed)
    scale = np.where(owner >= 0, values[np.clip(owner, 0, None)], 0.0)
    return (white * scale).astype(np.float32)


def _finish(linear: np.ndarray, cfg: CameraConfig, sigma: float, seed: int) -> np.ndarray:
    img = mosaic_bayer(WhiteImage(linear), cfg.bayer_pattern)
    img = add_image_noise(img, sigma, np.random.default_rng(seed))
    return encode_and_quantize(img, cfg.gamma_encode, cfg.bit_depth).samples


def _render_group(entries: list[CorpusEntry], out_dir: str, rays: int, with_scene: bool,
                  radius_mm: float) -> list[dict]:
    out = Path(out_dir)
    first = entries[0]
    rows = []
    try:
        cfg = first.config.replace(aperture_radius_mm=radius_mm, image_noise_sigma=0.0)
        truth = ground_truth(cfg)
        white, truth, owner = render_white_image(
            cfg, SynthesisParams(rays_per_pixel=rays, rng_seed=cfg.rng_seed), truth,
            return_owner=True)
        gt_json = out / "truth" / f"{first.group}.json"
        write_ground_truth(truth, gt_json, gt_json.with_suffix(".csv"),
                           {"aperture": first.aperture, "rays_per_pixel": rays})
        linear = white.samples
        scene = lenslet_scene(linear, owner, cfg.rng_seed + 1) if with_scene else None
        for e in entries:
            img_path = out / "images" / f"{e.id}.pgm"
            write_pgm(img_path, _finish(linear, cfg, e.sigma_n, e.noise_seed), 2 ** cfg.bit_depth - 1)
            scene_path = ""
            if scene is not None:
                sp = out / "scenes" / f"{e.id}_scene.pgm"
                write_pgm(sp, _finish(scene, cfg, e.sigma_n, e.noise_seed + 1), 2 ** cfg.bit_depth - 1)
                scene_path = str(sp.relative_to(out))
            rows.append(_row(e, str(img_path.relative_to(out)), str(gt_json.relative_to(out)),
                             scene_path, "ok"))
    except (OSError, ValueError) as exc:
        log.error("corpus group %s failed: %s", first.group, exc)
        done = {r["id"] for r in rows}
        rows += [_row(e, "", "", "", "failed") for e in entries if e.id not in done]
    return rows


def _row(e: CorpusEntry, img: str, gt: str, scene: str, status: str) -> dict:
    c = e.config
    return {"id": e.id, "F_mm": c.main_focal_mm, "aperture": e.aperture,
            "alpha_deg": c.grid_rotation_deg, "ox": c.grid_offset_um[0], "oy": c.grid_offset_um[1],
            "sigma_n": e.sigma_n, "img_path": img, "gt_path": gt, "sigma_g": c.grid_noise_px,
            "status": status, "scene_path": scene}


def generate_corpus(sweep: Sweep, out_dir: str | Path, jobs: int = 1) -> list[dict]:
    """Render every sweep entry and write images, ground truth and ``manifest.csv``.

    Entries sharing an optical configuration are rendered once and differ
    only in their image noise. Offsets in the manifest are micrometres.

    Returns:
        Manifest rows in entry order. Rows of entries that could not be
        written have status "failed".
    """
    out = Path(out_dir)
    for sub in ("images", "truth", "scenes"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = sweep.expand()
    groups: dict[str, list[CorpusEntry]] = {}
    for e in entries:
        groups.setdefault(e.group, []).append(e)
    radii: dict[tuple[float, str], float] = {}
    for g in groups.values():
        key = (g[0].config.main_focal_mm, g[0].aperture)
        if key not in radii:
            radii[key] = _aperture_radius(g[0].config, g[0].aperture, sweep.rays_per_pixel)
    tasks = [(g, str(out), sweep.rays_per_pixel, sweep.with_scene,
              radii[(g[0].config.main_focal_mm, g[0].aperture)]) for g in groups.values()]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_render_group, *zip(*tasks)))
    else:
        results = [_render_group(*t) for t in tasks]
    by_id = {r["id"]: r for rows in results for r in rows}
    rows = [by_id[e.id] for e in entries]
    write_manifest(rows, out / "manifest.csv")
    return rows


def write_manifest(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r.get(k, "") for k in MANIFEST_FIELDS})


def read_manifest(path: str | Path) -> list[dict]:
    """Manifest rows with numeric columns converted and paths made absolute."""
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            missing = [k for k in MANIFEST_FIELDS[:9] if k not in r]
            if missing:
                raise ValueError(f"manifest {path} lacks columns {missing}")
            for k in ("F_mm", "alpha_deg", "ox", "oy", "sigma_n", "sigma_g"):
                if r.get(k) not in (None, ""):
                    r[k] = float(r[k])
            for k in ("img_path", "gt_path", "scene_path"):
                if r.get(k):
                    r[k] = str(path.parent / r[k])
            r.setdefault("status", "ok")
            rows.append(r)
    return rows
