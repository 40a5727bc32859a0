"""Regular hexagonal grid model shared by the estimators and the metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT3 = math.sqrt(3.0)


def rot2(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def hex_basis(spacing: float, rotation_deg: float) -> np.ndarray:
    """Columns a1 = R(d, 0) and a2 = R(d/2, sqrt3 d/2) generating the hex lattice."""
    r = rot2(rotation_deg)
    return r @ np.array([[spacing, spacing / 2.0], [0.0, spacing * SQRT3 / 2.0]])


def reduce_to_cell(vec: np.ndarray, spacing: float, rotation_deg: float) -> np.ndarray:
    """Shortest representative of ``vec`` modulo the hex lattice."""
    vec = np.asarray(vec, dtype=float)
    basis = hex_basis(spacing, rotation_deg)
    coords = np.linalg.solve(basis, vec.reshape(-1, 2).T).T
    base = np.floor(coords)
    best = None
    best_norm = None
    for di in (0.0, 1.0):
        for dj in (0.0, 1.0):
            cand = vec.reshape(-1, 2) - (base + [di, dj]) @ basis.T
            norm = np.hypot(cand[:, 0], cand[:, 1])
            if best is None:
                best, best_norm = cand, norm
            else:
                take = norm < best_norm
                best = np.where(take[:, None], cand, best)
                best_norm = np.where(take, norm, best_norm)
    return best.reshape(vec.shape)


def build_grid(spacing: float, rotation_deg: float, offset_px, sensor_px: tuple[int, int],
               margin_ml: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Points of a regular hex grid covering the sensor.

    Lens (i, j) sits at ``center + offset + R(alpha) ((i + (j mod 2)/2) d, j sqrt3/2 d)``
    with ``center`` the sensor centre.

    Returns:
        ``(indices, points)``: (N, 2) integer (i, j) and (N, 2) pixel coordinates,
        restricted to the sensor plus ``margin_ml`` lens pitches.
    """
    if not (math.isfinite(spacing) and spacing > 0 and math.isfinite(rotation_deg)):
        raise ValueError("grid parameters must be finite with positive spacing")
    sx, sy = sensor_px
    center = np.array([(sx - 1) / 2.0, (sy - 1) / 2.0])
    offset = np.asarray(offset_px, dtype=float)
    reach = math.hypot(sx, sy) / 2.0 + np.hypot(*offset) + (margin_ml + 2) * spacing
    ni = int(math.ceil(reach / spacing)) + 1
    nj = int(math.ceil(reach / (spacing * SQRT3 / 2.0))) + 1
    jj, ii = np.meshgrid(np.arange(-nj, nj + 1), np.arange(-ni, ni + 1), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    x = (ii + 0.5 * np.mod(jj, 2)) * spacing
    y = jj * spacing * SQRT3 / 2.0
    pts = np.column_stack([x, y]) @ rot2(rotation_deg).T + center + offset
    m = margin_ml * spacing
    keep = ((pts[:, 0] >= -m) & (pts[:, 0] <= sx - 1 + m) & (pts[:, 1] >= -m)
            & (pts[:, 1] <= sy - 1 + m))
    return np.column_stack([ii[keep], jj[keep]]), pts[keep]


@dataclass
class GridModel:
    """Estimated regular hexagonal grid.

    ``offset_px`` is the position of lens (0, 0) relative to the sensor centre.
    """

    spacing_px: float
    rotation_deg: float
    offset_px: tuple[float, float]
    basis: np.ndarray
    sensor_px: tuple[int, int]
    method: str = "proposed"
    hyperparams: dict | None = None
    objective: float | None = None
    runtime_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.offset_px = (float(self.offset_px[0]), float(self.offset_px[1]))
        self.basis = np.asarray(self.basis, dtype=float).reshape(2, 2)
        self.sensor_px = (int(self.sensor_px[0]), int(self.sensor_px[1]))

    @classmethod
    def from_params(cls, spacing: float, rotation_deg: float, offset_px, sensor_px,
                    **kwargs) -> "GridModel":
        basis = np.column_stack([rot2(rotation_deg) @ [spacing, 0.0],
                                 rot2(rotation_deg + 120.0) @ [spacing, 0.0]])
        return cls(spacing, rotation_deg, offset_px, basis, sensor_px, **kwargs)

    def points(self, margin_ml: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        return build_grid(self.spacing_px, self.rotation_deg, self.offset_px, self.sensor_px,
                          margin_ml)

    def to_dict(self) -> dict:
        out = {
            "spacing_px": float(self.spacing_px),
            "rotation_deg": float(self.rotation_deg),
            "offset_px": [float(v) for v in self.offset_px],
            "basis": [[float(v) for v in self.basis[:, 0]], [float(v) for v in self.basis[:, 1]]],
            "hyperparams": self.hyperparams,
            "objective": None if self.objective is None else float(self.objective),
            "runtime_s": float(self.runtime_s),
            "method": self.method,
            "sensor_px": list(self.sensor_px),
        }
        if self.extra:
            out["extra"] = self.extra
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GridModel":
        try:
            basis = np.array(data["basis"], dtype=float).T
            return cls(float(data["spacing_px"]), float(data["rotation_deg"]), data["offset_px"],
                       basis, tuple(data["sensor_px"]), data.get("method", "proposed"),
                       data.get("hyperparams"), data.get("objective"),
                       float(data.get("runtime_s", 0.0)), data.get("extra", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed grid model: {exc}") from exc
