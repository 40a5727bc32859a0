from __future__ import annotations

import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mlaforge.camera import CameraConfig

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def lytro() -> CameraConfig:
    """Lytro Illum-like camera with a 30 mm main lens and no grid noise."""
    return CameraConfig(grid_noise_px=0.0)


@pytest.fixture
def small_config() -> CameraConfig:
    """A 240 x 200 px sensor with the Lytro pitch, cheap enough to ray-trace in tests."""
    return CameraConfig(sensor_px=(240, 200), grid_noise_px=0.0, main_focal_mm=30.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_results():
    """Manifest rows and quality reports of the cached 24-image desk corpus."""
    import desk

    return desk.build_results()
