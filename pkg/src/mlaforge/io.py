"""File formats: 16-bit PGM/PNG rasters, ground-truth sidecars, grid models."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .camera import CameraConfig, MlaGroundTruth
from .grid import GridModel


def write_pgm(path: str | Path, img: np.ndarray, maxval: int) -> None:
    """Write a single-channel binary PGM (P5), big-endian for maxval > 255."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM needs a 2D array")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must lie in [1, 65535]")
    h, w = img.shape
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(img, dtype=dtype).tobytes())


def _pgm_tokens(data: bytes, count: int) -> tuple[list[str], int]:
    tokens: list[str] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    return tokens, pos + 1


def read_pgm(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a binary PGM. Returns ``(array uint16, maxval)``."""
    data = Path(path).read_bytes()
    try:
        tokens, pos = _pgm_tokens(data, 4)
        if tokens[0] != "P5":
            raise ValueError("not a binary PGM")
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except (IndexError, UnicodeDecodeError) as exc:
        raise ValueError(f"corrupt PGM header in {path}") from exc
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    if len(data) - pos < n:
        raise ValueError(f"truncated PGM {path}")
    img = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return img.astype(np.uint16), maxval


def read_raster(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PGM or PNG raster. Returns ``(array, maxval)``.

    For PNG the maxval is taken from a ``<stem>.json`` sidecar key ``bit_depth``
    when present, otherwise 65535.
    """
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".pnm"):
        return read_pgm(path)
    import cv2

    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ValueError(f"cannot read image {path}")
    if img.ndim == 3:
        img = img[..., ::-1]
    maxval = 65535 if img.dtype == np.uint16 else 255
    meta = path.with_suffix(".json")
    if meta.exists():
        bits = json.loads(meta.read_text()).get("bit_depth")
        if bits:
            maxval = 2 ** int(bits) - 1
    return img, maxval


def write_png16(path: str | Path, img: np.ndarray) -> None:
    import cv2

    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[..., ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(arr, dtype=np.uint16)):
        raise OSError(f"cannot write {path}")


def _sig9(x: float) -> str:
    return f"{x:.9g}"


def write_ground_truth(truth: MlaGroundTruth, json_path: str | Path, csv_path: str | Path,
                       extra: dict | None = None) -> None:
    """JSON header plus CSV ``i,j,cx_px,cy_px,cox_px,coy_px,lambda`` of visible lenses."""
    json_path, csv_path = Path(json_path), Path(csv_path)
    header = {
        "grid": truth.grid_dict(),
        "config": truth.config.to_dict(),
        "lens_count": int(truth.visible.sum()),
        "centers_csv": csv_path.name,
    }
    if extra:
        header.update(extra)
    json_path.write_text(json.dumps(header, indent=2))
    idx = truth.indices[truth.visible]
    cp = truth.perspective_px[truth.visible]
    co = truth.orthogonal_px[truth.visible]
    lam = truth.lam[truth.visible]
    with open(csv_path, "w", newline="") as fh:
        fh.write("i,j,cx_px,cy_px,cox_px,coy_px,lambda\n")
        for k in range(idx.shape[0]):
            fh.write(f"{idx[k, 0]},{idx[k, 1]},{_sig9(cp[k, 0])},{_sig9(cp[k, 1])},"
                     f"{_sig9(co[k, 0])},{_sig9(co[k, 1])},{_sig9(lam[k])}\n")


class TruthTable:
    """Ground truth as read back from disk: grid parameters plus visible lens centers."""

    def __init__(self, header: dict, indices: np.ndarray, perspective_px: np.ndarray,
                 orthogonal_px: np.ndarray, lam: np.ndarray):
        self.header = header
        self.config = CameraConfig.from_dict(header["config"])
        self.indices = indices
        self.perspective_px = perspective_px
        self.orthogonal_px = orthogonal_px
        self.lam = lam
        grid = header["grid"]
        self.spacing_px = float(grid["spacing_px"])
        self.rotation_deg = float(grid["rotation_deg"])
        self.offset_px = np.array(grid["offset_px"], dtype=float)

    def visible_perspective(self) -> np.ndarray:
        return self.perspective_px


def read_ground_truth(json_path: str | Path) -> TruthTable:
    json_path = Path(json_path)
    header = json.loads(json_path.read_text())
    csv_path = json_path.parent / header["centers_csv"]
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    return TruthTable(header, data[:, :2].astype(int), data[:, 2:4], data[:, 4:6], data[:, 6])


def write_grid(grid: GridModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(grid.to_dict(), indent=2))


def read_grid(path: str | Path) -> GridModel:
    return GridModel.from_dict(json.loads(Path(path).read_text()))


def json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    raise TypeError(f"not serializable: {type(obj)}")


__all__ = [
    "TruthTable", "read_ground_truth", "read_grid", "read_pgm", "read_raster",
    "write_ground_truth", "write_grid", "write_pgm", "write_png16", "json_default",
]
