"""Sensor effects: Bayer mosaic, additive noise, gamma encoding and quantization."""

from __future__ import annotations

import numpy as np

from ..camera import BAYER_PATTERNS
from .render import WhiteImage

CHANNEL_INDEX = {"R": 0, "G": 1, "B": 2}


def bayer_channels(pattern: str, shape: tuple[int, int]) -> np.ndarray:
    """Channel index (0=R, 1=G, 2=B) of every pixel for a 2x2 pattern string.

    The pattern lists the top-left 2x2 block row by row, so for "GRBG"
    pixel (x=1, y=0) is red and (x=0, y=1) is blue.
    """
    if pattern not in BAYER_PATTERNS:
        raise ValueError(f"unknown Bayer pattern {pattern!r}")
    block = np.array([[CHANNEL_INDEX[pattern[0]], CHANNEL_INDEX[pattern[1]]],
                      [CHANNEL_INDEX[pattern[2]], CHANNEL_INDEX[pattern[3]]]], dtype=np.uint8)
    h, w = shape
    reps = (-(-h // 2), -(-w // 2))
    return np.tile(block, reps)[:h, :w]


def mosaic_bayer(img: WhiteImage, pattern: str, color_response: np.ndarray | None = None
                 ) -> WhiteImage:
    """Keep only each pixel's Bayer channel of the color-response-weighted gray image."""
    if img.mosaiced:
        raise ValueError("image is already mosaiced")
    response = np.eye(3) if color_response is None else np.asarray(color_response, dtype=float)
    gains = response.sum(axis=1).astype(np.float32)
    chan = bayer_channels(pattern, img.samples.shape)
    samples = np.asarray(img.samples, dtype=np.float32) * gains[chan]
    return WhiteImage(samples, mosaiced=True, bayer_pattern=pattern, bit_depth=None,
                      metadata_ref=img.metadata_ref)


def add_image_noise(img: WhiteImage, sigma: float, rng: np.random.Generator) -> WhiteImage:
    """Add N(0, sigma) to normalized samples and clip to [0, 1]."""
    if sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    if img.bit_depth is not None:
        raise ValueError("noise is added to normalized samples, before quantization")
    samples = np.asarray(img.samples, dtype=np.float32)
    if sigma > 0:
        noise = rng.standard_normal(samples.shape, dtype=np.float32)
        samples = np.clip(samples + np.float32(sigma) * noise, 0.0, 1.0)
    return WhiteImage(samples, img.mosaiced, img.bayer_pattern, None, img.metadata_ref)


def encode_and_quantize(img: WhiteImage, gamma: float = 0.4, bit_depth: int = 10) -> WhiteImage:
    """Gamma-encode linear values and round to integer codes."""
    if not 1 <= bit_depth <= 16:
        raise ValueError("bit_depth must lie in [1, 16]")
    levels = 2 ** bit_depth - 1
    v = np.clip(np.asarray(img.samples, dtype=np.float64), 0.0, 1.0)
    codes = np.rint(v ** gamma * levels).astype(np.uint16)
    return WhiteImage(codes, img.mosaiced, img.bayer_pattern, bit_depth, img.metadata_ref)


def linearize(codes: np.ndarray, gamma: float, bit_depth: int, black: float = 0.0) -> np.ndarray:
    """Invert gamma encoding of integer codes to linear float32 in [0, 1]."""
    levels = float(2 ** bit_depth - 1)
    v = np.clip((codes.astype(np.float32) - black) / np.float32(levels - black), 0.0, 1.0)
    return v ** np.float32(1.0 / gamma)
