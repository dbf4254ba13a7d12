"""Box outlines burned into an image: healthy in blue, stressed in yellow."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .geometry import HEALTHY, STRESSED, LabeledBox
from .dataio.pnm import ImageBuffer

CLASS_COLORS = {HEALTHY: (0, 0, 255), STRESSED: (255, 255, 0)}
EDGE_WIDTH = 2


def outline_mask(box, height: int, width: int, edge: int = EDGE_WIDTH) -> np.ndarray:
    """Pixels within ``edge`` of the box border, using the metrics pixel convention.

    The ring is computed on the unclipped box and then cut to the image, so a
    box running off the image has no edge drawn along the image border.
    """
    x0, y0, x1, y1 = box.as_tuple()
    c0, c1 = math.floor(x0), math.floor(x1)
    r0, r1 = math.floor(y0), math.floor(y1)
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    inside = (rows >= r0) & (rows < r1) & (cols >= c0) & (cols < c1)
    core = (rows >= r0 + edge) & (rows < r1 - edge) & (cols >= c0 + edge) & (cols < c1 - edge)
    return inside & ~core


def draw_overlay(img: ImageBuffer, boxes: Sequence[LabeledBox], edge: int = EDGE_WIDTH) -> ImageBuffer:
    if not boxes:
        return ImageBuffer(img.data.copy(), img.maxval)
    data = img.data
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    else:
        data = data[:, :, :3].copy()
    h, w = data.shape[:2]
    for det in boxes:
        color = np.asarray(CLASS_COLORS[det.class_id], dtype=np.float64) / 255.0
        data[outline_mask(det.box, h, w, edge)] = color
    return ImageBuffer(data, img.maxval)
