"""Microlens grid estimation, white-image synthesis and light-field decoding."""

from __future__ import annotations

__version__ = "0.1.0"
