"""Command-line interface: bounds, synth, estimate, evaluate and decode.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 estimation error,
5 decoding error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .camera import accuracy_bounds
from .config import RunConfig, dump_defaults, load_config

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ESTIMATE, EXIT_DECODE = 0, 2, 3, 4, 5
SUCCESS_FRACTION = 0.9

log = logging.getLogger("mlaforge")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _config(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def write_run_manifest(path: Path, command: str, cfg: RunConfig, inputs: list[str],
                       outputs: list[str], timings: dict, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "timings": timings,
        "tool_version": __version__,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": cfg.to_dict(),
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2, default=str))


def _printed_bounds(b) -> dict:
    return {
        "delta_f_um": f"{b.delta_f_um:.1f}",
        "delta_tilt_deg": f"{b.delta_tilt_deg:.4f}",
        "delta_d_max_px": [f"{v:.4f}" for v in b.delta_d_max_px],
        "spacing_bound_px": f"{b.spacing_bound_px:.4f}",
        "rotation_bound_deg": f"{b.rotation_bound_deg:.4f}",
        "offset_bound_px": f"{b.offset_bound_px:.1f}",
    }


def cmd_bounds(args) -> int:
    cfg = _config(args)
    t0 = time.perf_counter()
    try:
        b = accuracy_bounds(cfg.camera)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    out = {"bounds": b.to_dict(), "printed": _printed_bounds(b),
           "main_focal_mm": cfg.camera.main_focal_mm}
    text = json.dumps(out, indent=2)
    print(text)
    if args.out:
        try:
            Path(args.out).write_text(text + "\n")
            write_run_manifest(Path(str(args.out) + ".run.json"), "bounds", cfg,
                               [args.config or "<defaults>"], [args.out],
                               {"total_s": time.perf_counter() - t0})
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}") from exc
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth.corpus import desk_sweep, generate_corpus, paper_sweep, write_manifest

    cfg = _config(args)
    if args.preset == "desk":
        sweep = desk_sweep(cfg.seed, camera=cfg.camera.to_dict())
    elif args.preset == "paper":
        sweep = dataclasses.replace(paper_sweep(cfg.seed), camera=cfg.camera.to_dict())
    else:
        sweep = cfg.sweep
    if args.rays is not None:
        sweep = dataclasses.replace(sweep, rays_per_pixel=args.rays)
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        if args.plan_only:
            from .synth.corpus import _row

            out.mkdir(parents=True, exist_ok=True)
            rows = [_row(e, "", "", "", "planned") for e in sweep.expand()]
            write_manifest(rows, out / "manifest.csv")
        else:
            rows = generate_corpus(sweep, out, jobs=args.jobs)
        write_run_manifest(out / "run.json", "synth", cfg, [args.config or "<defaults>"],
                           [str(out / "manifest.csv")], {"total_s": time.perf_counter() - t0},
                           {"sweep": sweep.to_dict()})
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write corpus to {out}: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    failed = sum(r["status"] == "failed" for r in rows)
    print(f"{len(rows)} manifest rows written to {out / 'manifest.csv'} ({failed} failed)")
    return EXIT_IO if failed else EXIT_OK


def _read_image(path: str) -> tuple[np.ndarray, int]:
    from .io import read_raster

    if not Path(path).is_file():
        raise CliError(EXIT_IO, f"no such image: {path}")
    try:
        return read_raster(path)
    except (ValueError, OSError) as exc:
        # the file exists, so an unreadable raster is a bad input for estimation
        raise CliError(EXIT_ESTIMATE, f"cannot decode image {path}: {exc}") from exc


def _estimate(cfg: RunConfig, raw: np.ndarray, maxval: int, method: str):
    from .estimate import estimate_grid

    cam = cfg.camera
    if raw.ndim != 2:
        raise CliError(EXIT_ESTIMATE, "white image must be a single-channel mosaic")
    img = raw.astype(np.float32) / np.float32(maxval)
    expected = cfg.estimate.expected_spacing_px or cam.spacing_px
    try:
        return estimate_grid(img, method, cam.main_focal_mm, cam.ml_focal_um, expected,
                             cfg.estimate.fourier, cfg.estimate.fixed_hyperparams())
    except ValueError as exc:
        raise CliError(EXIT_ESTIMATE, f"estimation failed: {exc}") from exc


def cmd_estimate(args) -> int:
    from .io import write_grid

    cfg = _config(args)
    method = args.method[0] if args.method else cfg.estimate.method
    if method not in ("proposed", "baseline"):
        raise CliError(EXIT_CONFIG, f"unknown method {method!r}")
    raw, maxval = _read_image(args.image)
    grid = _estimate(cfg, raw, maxval, method)
    out = Path(args.out)
    try:
        write_grid(grid, out)
        write_run_manifest(Path(str(out) + ".run.json"), "estimate", cfg, [args.image], [str(out)],
                           {"estimate_s": grid.runtime_s}, {"method": method})
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {out}: {exc}") from exc
    print(json.dumps({"method": grid.method, "spacing_px": grid.spacing_px,
                      "rotation_deg": grid.rotation_deg, "offset_px": list(grid.offset_px),
                      "runtime_s": grid.runtime_s}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_corpus, write_reports
    from .metrics import corpus_stats
    from .synth.corpus import read_manifest

    cfg = _config(args)
    methods = args.method or cfg.methods
    for m in methods:
        if m not in ("proposed", "baseline"):
            raise CliError(EXIT_CONFIG, f"unknown method {m!r}")
    try:
        rows = read_manifest(args.manifest)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read manifest: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    rows = [r for r in rows if r.get("status", "ok") == "ok"]
    if not rows:
        raise CliError(EXIT_CONFIG, f"manifest {args.manifest} has no usable rows")
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        reports = evaluate_corpus(rows, methods, cfg.estimate, args.jobs, args.ghosting,
                                  out / "grids")
        write_reports(reports, out / "reports.csv", out / "reports.json")
        ok = [r for r in reports if r.status == "ok"]
        if ok:
            summary = corpus_stats(ok, rows)
            summary.write_csv(out / "summary.csv")
            (out / "summary.md").write_text(summary.markdown())
            (out / "correlations.json").write_text(json.dumps(summary.correlations, indent=2))
            print(summary.markdown())
        write_run_manifest(out / "run.json", "evaluate", cfg, [args.manifest],
                           [str(out / n) for n in ("reports.csv", "reports.json", "summary.csv",
                                                   "summary.md", "correlations.json", "grids")],
                           {"total_s": time.perf_counter() - t0}, {"methods": methods})
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write results to {out}: {exc}") from exc
    frac = len(ok) / len(reports)
    if frac < SUCCESS_FRACTION:
        log.error("only %d of %d estimates succeeded", len(ok), len(reports))
        return EXIT_ESTIMATE
    return EXIT_OK


def cmd_decode(args) -> int:
    from .decode.pipeline import decode, ghosting, write_light_field
    from .io import read_grid

    cfg = _config(args)
    raw, maxval = _read_image(args.raw)
    white, wmax = _read_image(args.white)
    t0 = time.perf_counter()
    if args.grid:
        try:
            grid = read_grid(args.grid)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read grid: {exc}") from exc
        except ValueError as exc:
            raise CliError(EXIT_DECODE, str(exc)) from exc
    else:
        grid = _estimate(cfg, white, wmax, "proposed")
    opts = cfg.decode
    if opts.white_level is None:
        opts = dataclasses.replace(opts, white_level=float(max(maxval, wmax)))
    if opts.gamma is None:
        opts = dataclasses.replace(opts, gamma=cfg.camera.gamma_encode)
    try:
        lf = decode(raw, white, grid, opts, {"raw": args.raw, "white": args.white})
        ghost = ghosting(lf) if args.ghosting else None
    except ValueError as exc:
        raise CliError(EXIT_DECODE, f"decoding failed: {exc}") from exc
    out = Path(args.out)
    try:
        write_light_field(lf, out, grid_id=args.grid or "estimated")
        write_run_manifest(out / "run.json", "decode", cfg,
                           [args.raw, args.white] + ([args.grid] if args.grid else []),
                           [str(out / "manifest.json")],
                           {"total_s": time.perf_counter() - t0}, {"ghosting": ghost})
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write light field to {out}: {exc}") from exc
    print(json.dumps({"dims": list(lf.shape), "ghosting": ghost, "out": str(out)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="seed for every random choice (overrides config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for corpus work")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mlaforge", description=__doc__.splitlines()[0])
    parser.add_argument("--dump-defaults", action="store_true",
                        help="print the default configuration as YAML and exit")
    parser.add_argument("--version", action="version", version=f"mlaforge {__version__}")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("bounds", parents=[common], help="print the analytic accuracy bounds")
    p.add_argument("--out", help="also write the JSON here")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic white-image corpus")
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--preset", choices=["config", "desk", "paper"], default="config",
                   help="sweep from the config file, the 24-image desk corpus or the full sweep")
    p.add_argument("--rays", type=int, help="rays per pixel (overrides the sweep)")
    p.add_argument("--plan-only", action="store_true",
                   help="write the manifest rows without rendering")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", parents=[common], help="estimate the grid of a white image")
    p.add_argument("image", help="white image (16-bit PGM or PNG)")
    p.add_argument("--method", action="append", choices=["proposed", "baseline"])
    p.add_argument("--out", required=True, help="grid JSON path")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate estimators on a corpus")
    p.add_argument("manifest", help="corpus manifest.csv")
    p.add_argument("--method", action="append", choices=["proposed", "baseline"])
    p.add_argument("--out", required=True, help="results directory")
    p.add_argument("--ghosting", action="store_true",
                   help="also decode each lenslet scene and report its ghosting")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("decode", parents=[common], help="decode a lenslet image to a light field")
    p.add_argument("raw", help="raw lenslet image")
    p.add_argument("white", help="white image of the same camera settings")
    p.add_argument("--grid", help="grid JSON; estimated from the white image when omitted")
    p.add_argument("--out", required=True, help="light-field directory")
    p.add_argument("--ghosting", action="store_true", help="report the ghosting metric")
    p.set_defaults(func=cmd_decode)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_defaults:
        sys.stdout.write(dump_defaults())
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"mlaforge {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
