"""Run estimators over a corpus manifest and collect quality reports."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .camera import accuracy_bounds
from .config import EstimateSettings
from .decode.pipeline import DecodeOptions, decode, ghosting
from .estimate import estimate_grid
from .grid import GridModel
from .io import read_ground_truth, read_raster, write_grid
from .metrics import QualityReport, failed_report, quality_report

log = logging.getLogger(__name__)

REPORT_FIELDS = ["wi_id", "method", "Q_g", "Q_s", "Q_r", "offset_err", "runtime_s", "M",
                 "rejected", "spacing_ok", "rotation_ok", "offset_ok", "status", "ghosting",
                 "error"]


def estimate_for_row(row: dict, method: str, settings: EstimateSettings
                     ) -> tuple[GridModel, object, np.ndarray, int]:
    """Estimate the grid of one manifest row. Returns ``(grid, truth, raw, maxval)``."""
    raw, maxval = read_raster(row["img_path"])
    truth = read_ground_truth(row["gt_path"])
    cfg = truth.config
    expected = settings.expected_spacing_px or cfg.spacing_px
    grid = estimate_grid(raw.astype(np.float32) / np.float32(maxval), method, cfg.main_focal_mm,
                         cfg.ml_focal_um, expected, settings.fourier,
                         settings.fixed_hyperparams())
    return grid, truth, raw, maxval


def scene_ghosting(row: dict, grid: GridModel, white_raw: np.ndarray, maxval: int, truth,
                   options: DecodeOptions | None = None) -> float:
    """Ghosting of the row's lenslet scene decoded with ``grid`` (hex-packed, no rectification)."""
    scene, _ = read_raster(row["scene_path"])
    cfg = truth.config
    base = options or DecodeOptions()
    opts = dataclasses.replace(base, white_level=float(maxval),
                               gamma=base.gamma if base.gamma is not None else cfg.gamma_encode,
                               bayer_pattern=cfg.bayer_pattern, rectify=False)
    return ghosting(decode(scene, white_raw, grid, opts))


def evaluate_row(row: dict, method: str, settings: EstimateSettings, with_ghosting: bool = False,
                 grid_dir: str | None = None) -> QualityReport:
    """Quality report of one method on one manifest row; failures become failed reports."""
    meta = {k: row[k] for k in ("F_mm", "aperture", "sigma_n", "sigma_g") if k in row}
    try:
        grid, truth, raw, maxval = estimate_for_row(row, method, settings)
    except (ValueError, OSError) as exc:
        log.warning("%s/%s failed: %s", row["id"], method, exc)
        return failed_report(row["id"], method, str(exc), meta)
    if grid_dir is not None:
        write_grid(grid, Path(grid_dir) / f"{row['id']}_{method}.json")
    try:
        rep = quality_report(grid, truth, row["id"], accuracy_bounds(truth.config), meta)
    except ValueError as exc:
        return failed_report(row["id"], method, str(exc), meta)
    if with_ghosting and row.get("scene_path"):
        try:
            rep.meta["ghosting"] = scene_ghosting(row, grid, raw, maxval, truth)
        except (ValueError, OSError) as exc:
            rep.meta["ghosting_error"] = str(exc)
    return rep


def _evaluate_task(args):
    return evaluate_row(*args)


def evaluate_corpus(rows: list[dict], methods: list[str], settings: EstimateSettings,
                    jobs: int = 1, with_ghosting: bool = False,
                    grid_dir: str | Path | None = None) -> list[QualityReport]:
    """Reports for every (row, method), in row-major order regardless of ``jobs``."""
    usable = [r for r in rows if r.get("status", "ok") == "ok"]
    if grid_dir is not None:
        Path(grid_dir).mkdir(parents=True, exist_ok=True)
        grid_dir = str(grid_dir)
    tasks = [(r, m, settings, with_ghosting, grid_dir) for r in usable for m in methods]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_evaluate_task, tasks))
    return [_evaluate_task(t) for t in tasks]


def write_reports(reports: list[QualityReport], csv_path: str | Path,
                  json_path: str | Path | None = None) -> None:
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for r in reports:
            d = r.to_dict()
            meta = d.pop("meta")
            d["ghosting"] = meta.get("ghosting", "")
            d["error"] = meta.get("error", "")
            writer.writerow({k: d.get(k, "") for k in REPORT_FIELDS})
    if json_path is not None:
        Path(json_path).write_text(json.dumps([r.to_dict() for r in reports], indent=2))
