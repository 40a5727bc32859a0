"""Grid quality measures and corpus-level statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import mean, median

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import poch

from .camera import AccuracyBounds
from .grid import GridModel, reduce_to_cell

REJECT_LIMIT = 0.10
APERTURE_CODES = {"none": 0, "mild": 1, "strong": 2}
SUMMARY_FIELDS = ["method", "F_mm", "sigma_g", "sigma_n", "aperture", "Qg_mean", "Qg_median",
                  "Qs_mean", "Qr_mean", "runtime_mean"]
CORRELATION_VARIABLES = ("F_mm", "sigma_g", "sigma_n", "aperture")


def match_points(estimated: np.ndarray, true_points: np.ndarray, max_dist: float
                 ) -> tuple[np.ndarray, int]:
    """Distances from each estimated point to its nearest true point, and the rejected count.

    Pairs further apart than ``max_dist`` are rejected.
    """
    estimated = np.asarray(estimated, dtype=float).reshape(-1, 2)
    true_points = np.asarray(true_points, dtype=float).reshape(-1, 2)
    if len(estimated) == 0:
        raise ValueError("no estimated grid points inside the sensor")
    if len(true_points) == 0:
        raise ValueError("grid mismatch: no true centers")
    dist, _ = cKDTree(true_points).query(estimated)
    ok = dist <= max_dist
    return dist[ok], int((~ok).sum())


def q_g_points(estimated: np.ndarray, true_points: np.ndarray, spacing: float
               ) -> tuple[float, int, int]:
    """RMS distance of matched pairs as ``(Q_g, M, rejected)``.

    Raises:
        ValueError: "grid mismatch" when more than 10% of the pairs are rejected.
    """
    dist, rejected = match_points(estimated, true_points, spacing / 2.0)
    total = len(dist) + rejected
    if rejected > REJECT_LIMIT * total or len(dist) == 0:
        raise ValueError(f"grid mismatch: {rejected} of {total} points further than d/2 from any center")
    return float(np.sqrt(np.mean(dist ** 2))), int(len(dist)), rejected


def q_g(grid: GridModel, truth) -> tuple[float, int]:
    """Q_g of a grid model against ground truth, using the grid points inside the sensor.

    ``truth`` is an :class:`MlaGroundTruth` or a :class:`TruthTable`.
    """
    _, pts = grid.points(margin_ml=0.0)
    qg, m, _ = q_g_points(pts, truth.visible_perspective(), grid.spacing_px)
    return qg, m


def q_g_ideal_expectation(sigma_g: float, m: int) -> float:
    """Mean of ``sigma_g * chi_M / sqrt(M)``.

    The gamma ratio comes from the Pochhammer symbol, which stays monotone in
    M where a difference of log-gamma values loses digits.
    """
    if m < 1 or sigma_g < 0:
        raise ValueError("need M >= 1 and sigma_g >= 0")
    if sigma_g == 0:
        return 0.0
    return sigma_g * math.sqrt(2.0 / m) * float(poch(m / 2.0, 0.5))


def fold_rotation(diff_deg: float) -> float:
    """Absolute rotation difference reduced by the 60 degree lattice symmetry, in [0, 30]."""
    r = math.fmod(abs(diff_deg), 60.0)
    return min(r, 60.0 - r)


def q_s_q_r(grid, truth) -> tuple[float, float]:
    """Absolute spacing error (px) and folded rotation error (degrees)."""
    return (abs(float(grid.spacing_px) - float(truth.spacing_px)),
            fold_rotation(float(grid.rotation_deg) - float(truth.rotation_deg)))


def offset_error(grid, truth) -> float:
    """Distance between estimated and true offset modulo the lattice."""
    diff = np.asarray(grid.offset_px, dtype=float) - np.asarray(truth.offset_px, dtype=float)
    return float(np.hypot(*reduce_to_cell(diff, float(truth.spacing_px), float(truth.rotation_deg))))


@dataclass
class QualityReport:
    """Quality of one estimated grid against its ground truth."""

    wi_id: str
    method: str
    Q_g: float
    Q_s: float
    Q_r: float
    offset_err: float
    runtime_s: float
    M: int
    rejected: int = 0
    spacing_ok: bool | None = None
    rotation_ok: bool | None = None
    offset_ok: bool | None = None
    status: str = "ok"
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.status == "ok":
            if min(self.Q_g, self.Q_s, self.Q_r) < 0:
                raise ValueError("quality measures must be >= 0")
            if self.M <= 0:
                raise ValueError("M must be > 0")

    @property
    def meets_requirements(self) -> bool:
        return bool(self.spacing_ok and self.rotation_ok and self.offset_ok)

    def to_dict(self) -> dict:
        return asdict(self)


def quality_report(grid: GridModel, truth, wi_id: str, bounds: AccuracyBounds | None = None,
                   meta: dict | None = None) -> QualityReport:
    """All quality measures of ``grid``, with pass markers when ``bounds`` is given."""
    _, pts = grid.points(margin_ml=0.0)
    qg, m, rejected = q_g_points(pts, truth.visible_perspective(), grid.spacing_px)
    qs, qr = q_s_q_r(grid, truth)
    oe = offset_error(grid, truth)
    marks = (None, None, None)
    if bounds is not None:
        marks = (qs < bounds.spacing_bound_px, qr < bounds.rotation_bound_deg,
                 oe < bounds.offset_bound_px)
    return QualityReport(wi_id, grid.method, qg, qs, qr, oe, float(grid.runtime_s), m, rejected,
                         *marks, meta=dict(meta or {}))


def failed_report(wi_id: str, method: str, reason: str, meta: dict | None = None) -> QualityReport:
    nan = math.nan
    return QualityReport(wi_id, method, nan, nan, nan, nan, nan, 0, 0, status="failed",
                         meta={**(meta or {}), "error": reason})


def pearson(x, y) -> float | None:
    """Pearson correlation, or None when either variable is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or len(x) != len(y):
        return None
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx <= 1e-12 * max(1.0, float(np.abs(x).max())) or sy <= 1e-12 * max(1.0, float(np.abs(y).max())):
        return None
    return float(np.clip(dx @ dy / (sx * sy), -1.0, 1.0))


def _variable(row: dict, name: str) -> float:
    if name == "aperture":
        return float(APERTURE_CODES[row["aperture"]])
    return float(row[name])


@dataclass
class CorpusSummary:
    rows: list[dict]
    correlations: dict[str, dict[str, float | None]]
    failures: dict[str, int]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
            writer.writeheader()
            for r in self.rows:
                writer.writerow({k: r[k] for k in SUMMARY_FIELDS})

    def markdown(self) -> str:
        return summary_markdown(self)


def corpus_stats(reports: list[QualityReport], manifest: list[dict]) -> CorpusSummary:
    """Means and medians per (method, F, sigma_g, sigma_n, aperture) and Pearson r of Q_g.

    The aperture level is coded none=0, mild=1, strong=2 for the correlation.
    Failed reports are counted per method and left out of the statistics.

    A single report per method gives a one-row summary with null correlations.

    Raises:
        ValueError: without reports, or with reports missing from the manifest.
    """
    if not reports:
        raise ValueError("corpus statistics need at least one report")
    by_id = {r["id"]: r for r in manifest}
    missing = {rep.wi_id for rep in reports} - set(by_id)
    if missing:
        raise ValueError(f"reports for ids not in the manifest: {sorted(missing)[:5]}")
    failures: dict[str, int] = {}
    groups: dict[tuple, list[QualityReport]] = {}
    per_method: dict[str, list[tuple[dict, QualityReport]]] = {}
    for rep in reports:
        if rep.status != "ok":
            failures[rep.method] = failures.get(rep.method, 0) + 1
            continue
        row = by_id[rep.wi_id]
        key = (rep.method, float(row["F_mm"]), float(row["sigma_g"]), float(row["sigma_n"]),
               row["aperture"])
        groups.setdefault(key, []).append(rep)
        per_method.setdefault(rep.method, []).append((row, rep))
    rows = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3], APERTURE_CODES.get(k[4], 9))):
        reps = groups[key]
        rows.append({
            "method": key[0], "F_mm": key[1], "sigma_g": key[2], "sigma_n": key[3],
            "aperture": key[4],
            "Qg_mean": mean(r.Q_g for r in reps), "Qg_median": median(r.Q_g for r in reps),
            "Qs_mean": mean(r.Q_s for r in reps), "Qr_mean": mean(r.Q_r for r in reps),
            "runtime_mean": mean(r.runtime_s for r in reps),
        })
    correlations = {}
    for method, pairs in per_method.items():
        qg = [rep.Q_g for _, rep in pairs]
        correlations[method] = {v: pearson([_variable(row, v) for row, _ in pairs], qg)
                                for v in CORRELATION_VARIABLES}
    return CorpusSummary(rows, correlations, failures)


def summary_markdown(summary: CorpusSummary) -> str:
    """Mean Q_g per (F, sigma_g) with one column per method, then the correlations."""
    methods = sorted({r["method"] for r in summary.rows})
    cells: dict[tuple[float, float], dict[str, list[float]]] = {}
    for r in summary.rows:
        cells.setdefault((r["F_mm"], r["sigma_g"]), {}).setdefault(r["method"], []).append(r["Qg_mean"])
    lines = ["| F [mm] | sigma_g [px] | " + " | ".join(f"{m} mean Q_g [px]" for m in methods) + " |",
             "|---|---|" + "---|" * len(methods)]
    for (F, sg) in sorted(cells):
        vals = []
        for m in methods:
            v = cells[(F, sg)].get(m)
            vals.append(f"{mean(v):.4f}" if v else "-")
        lines.append(f"| {F:g} | {sg:g} | " + " | ".join(vals) + " |")
    lines += ["", "| method | " + " | ".join(f"r(Q_g, {v})" for v in CORRELATION_VARIABLES) + " |",
              "|---|" + "---|" * len(CORRELATION_VARIABLES)]
    for m in sorted(summary.correlations):
        vals = ["null" if c is None else f"{c:+.3f}" for c in summary.correlations[m].values()]
        lines.append(f"| {m} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"
