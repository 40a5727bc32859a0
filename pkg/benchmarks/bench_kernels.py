"""Time the numba kernels against their numpy twins.

Usage::

    python3 benchmarks/bench_kernels.py --size 800 640 --repeat 3

Each kernel runs once untimed per backend (numba compilation, caches), then
``--repeat`` times; the best time is reported together with the largest
absolute difference between the two backends' outputs.
"""

from __future__ import annotations

import argparse
import os
import time

import numpy as np

from mlaforge.camera import CameraConfig, ground_truth
from mlaforge.decode import align_to_grid, demosaic_malvar, hex_to_rect, slice_patches
from mlaforge.grid import GridModel
from mlaforge.synth.render import pack_inputs, trace_window


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _first_array(out):
    while isinstance(out, tuple):
        out = out[0]
    out = getattr(out, "image", out)
    return np.asarray(out, dtype=np.float64)


def kernels(size: tuple[int, int], rays: int):
    cfg = CameraConfig(sensor_px=size, grid_noise_px=0.0, main_focal_mm=30.0,
                       grid_rotation_deg=0.15)
    truth = ground_truth(cfg)
    inputs = pack_inputs(cfg, truth)
    grid = GridModel.from_params(truth.spacing_px, truth.rotation_deg, truth.offset_px,
                                 cfg.sensor_px)
    w, h = size
    rng = np.random.default_rng(0)
    mosaic = rng.uniform(size=(h, w)).astype(np.float32)
    gray = rng.uniform(size=(h, w, 3)).astype(np.float32)
    aligned = align_to_grid(gray, grid)
    data, mask, layout = slice_patches(aligned)
    return {
        "render": lambda: trace_window(inputs, (0, 0, w, h), rays, 0),
        "demosaic": lambda: demosaic_malvar(mosaic, "GRBG"),
        "resample": lambda: align_to_grid(gray, grid),
        "slice": lambda: slice_patches(aligned),
        "hex_to_rect": lambda: hex_to_rect(data, mask, layout.shifted_rows()),
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, nargs=2, default=(800, 640), metavar=("W", "H"))
    parser.add_argument("--rays", type=int, default=16, help="rays per pixel for render")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    results = {}
    for backend, flag in (("numba", "0"), ("numpy", "1")):
        os.environ["MLAFORGE_NO_NUMBA"] = flag
        for name, fn in kernels(tuple(args.size), args.rays).items():
            results.setdefault(name, {})[backend] = _best(fn, args.repeat)
    os.environ.pop("MLAFORGE_NO_NUMBA", None)

    print(f"{'kernel':<12} {'numba s':>10} {'numpy s':>10} {'speed-up':>9} {'max diff':>10}")
    for name, r in results.items():
        (tn, on), (tp, op) = r["numba"], r["numpy"]
        diff = float(np.abs(_first_array(on) - _first_array(op)).max())
        print(f"{name:<12} {tn:>10.4f} {tp:>10.4f} {tp / tn:>8.1f}x {diff:>10.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
