"""Light-field decoding from a raw lenslet image and an estimated grid."""

from __future__ import annotations

from .align import AlignedImage, AlignedLattice, align_to_grid, slice_patches
from .demosaic import demosaic_malvar
from .hexrect import hex_to_rect
from .pipeline import (DecodeOptions, LightField, decode, devignette, ghosting, linearize,
                       write_light_field)

__all__ = [
    "AlignedImage", "AlignedLattice", "DecodeOptions", "LightField", "align_to_grid", "decode",
    "demosaic_malvar", "devignette", "ghosting", "hex_to_rect", "linearize", "slice_patches",
    "write_light_field",
]
