"""Three-channel composites from the four single-band multispectral images."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from .pnm import ImageBuffer

BANDS = ("G", "R", "RE", "NIR")


class BandSelection(tuple):
    """Ordered triple of distinct band names, e.g. ``BandSelection.parse("R-G-NIR")``."""

    def __new__(cls, bands):
        bands = tuple(b.upper() for b in bands)
        if len(bands) != 3:
            raise ConfigError(f"band selection needs exactly three bands, got {bands}")
        unknown = [b for b in bands if b not in BANDS]
        if unknown:
            raise ConfigError(f"unknown band(s) {unknown}; choose from {BANDS}")
        if len(set(bands)) != 3:
            raise ConfigError(f"duplicate band in selection {'-'.join(bands)}")
        return super().__new__(cls, bands)

    @classmethod
    def parse(cls, text: str) -> "BandSelection":
        return cls(text.split("-"))

    def __str__(self):
        return "-".join(self)


def compose_bands(g: ImageBuffer, r: ImageBuffer, re: ImageBuffer, nir: ImageBuffer,
                  sel: BandSelection) -> ImageBuffer:
    """Stack ``sel``'s bands into channels 0, 1, 2 in that order.

    All four inputs must be single-channel, pre-aligned and equally sized.
    """
    bands = dict(zip(BANDS, (g, r, re, nir)))
    if not isinstance(sel, BandSelection):
        sel = BandSelection(sel)
    for name, b in bands.items():
        if b.channels != 1:
            raise ShapeError(f"band {name} has {b.channels} channels, expected 1")
    shapes = {(b.height, b.width) for b in bands.values()}
    if len(shapes) != 1:
        raise ShapeError(f"band images differ in size: {sorted(shapes)}")
    chosen = [bands[name] for name in sel]
    maxval = max(b.maxval for b in chosen)
    return ImageBuffer(np.concatenate([b.data for b in chosen], axis=2), maxval)
