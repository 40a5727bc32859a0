"""YAML run configuration: camera, sweep, estimator and decoder settings under one seed."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .camera import CameraConfig
from .de import DEParams
from .decode.pipeline import DecodeOptions
from .fourier import FourierOptions, Hyperparams, PeakOptions, SearchSpace
from .synth.corpus import Sweep


def _build(cls, data: dict | None, section: str):
    data = dict(data or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown keys in {section}: {sorted(unknown)}")
    for f in dataclasses.fields(cls):
        if f.name in data and isinstance(data[f.name], list) and "tuple" in str(f.type):
            data[f.name] = tuple(data[f.name])
    try:
        return cls(**data)
    except TypeError as exc:
        raise ValueError(f"bad {section} section: {exc}") from exc


def fourier_options_from_dict(data: dict | None) -> FourierOptions:
    data = dict(data or {})
    peaks = _build(PeakOptions, data.pop("peaks", None), "estimate.fourier.peaks")
    space = _build(SearchSpace, data.pop("search_space", None), "estimate.fourier.search_space")
    de = _build(DEParams, data.pop("de", None), "estimate.fourier.de")
    opts = _build(FourierOptions, data, "estimate.fourier")
    return dataclasses.replace(opts, peaks=peaks, search_space=space, de=de)


@dataclass
class EstimateSettings:
    """Estimator selection and hints.

    ``expected_spacing_px`` sizes the baseline disc filter (default: the
    nominal pitch d / p). ``hyperparams`` fixes (sigma, gamma, q) and skips
    the optimiser.
    """

    method: str = "proposed"
    expected_spacing_px: float | None = None
    hyperparams: dict | None = None
    fourier: FourierOptions = field(default_factory=FourierOptions)

    def fixed_hyperparams(self) -> Hyperparams | None:
        if self.hyperparams is None:
            return None
        h = self.hyperparams
        return Hyperparams(float(h["window_sigma"]), float(h["gamma"]), float(h["stretch_low"]))

    def to_dict(self) -> dict:
        return {"method": self.method, "expected_spacing_px": self.expected_spacing_px,
                "hyperparams": self.hyperparams, "fourier": dataclasses.asdict(self.fourier)}


@dataclass
class RunConfig:
    seed: int = 0
    camera: CameraConfig = field(default_factory=CameraConfig)
    sweep: Sweep = field(default_factory=Sweep)
    estimate: EstimateSettings = field(default_factory=EstimateSettings)
    decode: DecodeOptions = field(default_factory=DecodeOptions)
    methods: list[str] = field(default_factory=lambda: ["proposed", "baseline"])

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy whose sweep and optimiser seeds all derive from ``seed``."""
        fourier = dataclasses.replace(self.estimate.fourier,
                                      de=dataclasses.replace(self.estimate.fourier.de, seed=seed))
        return dataclasses.replace(
            self, seed=seed, sweep=dataclasses.replace(self.sweep, seed=seed),
            estimate=dataclasses.replace(self.estimate, fourier=fourier))

    def to_dict(self) -> dict:
        sweep = self.sweep.to_dict()
        sweep.pop("camera", None)
        return {"seed": self.seed, "camera": self.camera.to_dict(), "sweep": sweep,
                "estimate": self.estimate.to_dict(), "decode": self.decode.to_dict(),
                "methods": list(self.methods)}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def config_from_dict(data: dict | None) -> RunConfig:
    """Build a validated run configuration; missing keys take their defaults.

    Raises:
        ValueError: on unknown keys or invalid values.
    """
    data = dict(data or {})
    known = {"seed", "camera", "sweep", "estimate", "decode", "methods"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown top-level keys: {sorted(unknown)}")
    seed = int(data.get("seed", 0))
    camera = CameraConfig.from_dict(dict(data.get("camera") or {}))
    sweep_data = dict(data.get("sweep") or {})
    if "camera" in sweep_data:
        raise ValueError("put camera settings in the top-level camera section")
    sweep = Sweep.from_dict({**sweep_data, "camera": camera.to_dict()})
    est = dict(data.get("estimate") or {})
    fourier = fourier_options_from_dict(est.pop("fourier", None))
    settings = _build(EstimateSettings, est, "estimate")
    settings = dataclasses.replace(settings, fourier=fourier)
    if settings.hyperparams is not None:
        settings.fixed_hyperparams()
    decode = _build(DecodeOptions, data.get("decode"), "decode")
    methods = list(data.get("methods", ["proposed", "baseline"]))
    for m in methods + [settings.method]:
        if m not in ("proposed", "baseline"):
            raise ValueError(f"unknown method {m!r}")
    return RunConfig(seed, camera, sweep, settings, decode, methods).with_seed(seed)


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML config file (defaults when ``path`` is None)."""
    if path is None:
        return config_from_dict({})
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ValueError(f"malformed config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ValueError(f"config {path} must be a mapping")
    try:
        return config_from_dict(data)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad config {path}: {exc}") from exc


def dump_defaults() -> str:
    return yaml.safe_dump(config_from_dict({}).to_dict(), sort_keys=False)
