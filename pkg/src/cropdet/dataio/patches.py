"""Rotated square patch extraction with matching box transforms.

A rotation by ``deg`` turns the image content counter-clockwise as
displayed (y axis pointing down) about ``center``. Pixel ``(i, j)`` has its
center at ``(j + 0.5, i + 0.5)``. Multiples of 90 degrees use exact
trigonometric constants, so sampling lands on pixel centers and the result
is a pure index permutation whenever the window is pixel-aligned.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Optional

import numpy as np

from ..errors import InvalidInputError
from ..geometry import Box, LabeledBox
from .annotations import Annotation
from .pnm import ImageBuffer

ROTATIONS = (0, 45, 90, 135)
MIN_RETAINED_FRACTION = 0.25
_H = math.sqrt(0.5)
_COS_SIN = {0: (1.0, 0.0), 45: (_H, _H), 90: (0.0, 1.0), 135: (-_H, _H)}
_EPS = 1e-9


def rotate_points(pts: np.ndarray, center, deg: int) -> np.ndarray:
    """Map source-image points into the rotated frame."""
    c, s = _COS_SIN[deg]
    d = np.asarray(pts, dtype=np.float64) - center
    return np.stack([center[0] + c * d[:, 0] + s * d[:, 1], center[1] - s * d[:, 0] + c * d[:, 1]], axis=1)


def unrotate_points(pts: np.ndarray, center, deg: int) -> np.ndarray:
    """Inverse of :func:`rotate_points`."""
    c, s = _COS_SIN[deg]
    d = np.asarray(pts, dtype=np.float64) - center
    return np.stack([center[0] + c * d[:, 0] - s * d[:, 1], center[1] + s * d[:, 0] + c * d[:, 1]], axis=1)


def _bilinear(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = data.shape[:2]
    fx = xs - 0.5
    fy = ys - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax = (fx - x0)[..., None]
    ay = (fy - y0)[..., None]
    xa, xb = np.clip(x0, 0, w - 1), np.clip(x0 + 1, 0, w - 1)
    ya, yb = np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1)
    top = data[ya, xa] * (1 - ax) + data[ya, xb] * ax
    bottom = data[yb, xa] * (1 - ax) + data[yb, xb] * ax
    return np.clip(top * (1 - ay) + bottom * ay, 0.0, 1.0)


def _map_box(box: Box, center, deg: int, offset, size: int) -> Optional[Box]:
    corners = np.array([[box.xmin, box.ymin], [box.xmax, box.ymin], [box.xmax, box.ymax], [box.xmin, box.ymax]])
    q = rotate_points(corners, center, deg) - offset
    x0, y0 = q.min(axis=0)
    x1, y1 = q.max(axis=0)
    full = (x1 - x0) * (y1 - y0)
    cx0, cy0 = max(x0, 0.0), max(y0, 0.0)
    cx1, cy1 = min(x1, float(size)), min(y1, float(size))
    if cx1 <= cx0 or cy1 <= cy0:
        return None
    if (cx1 - cx0) * (cy1 - cy0) < MIN_RETAINED_FRACTION * full:
        return None
    return Box(cx0, cy0, cx1, cy1)


def extract_patch(img: ImageBuffer, ann: Annotation, center, size: int, rotation_deg: int = 0,
                  filename: Optional[str] = None) -> tuple[ImageBuffer, Annotation]:
    """Rotate about ``center`` then crop a ``size`` x ``size`` window centred there.

    Boxes are carried through by rotating their corners and taking the
    axis-aligned hull, clipped to the patch; boxes keeping less than a
    quarter of that hull after clipping are dropped.
    """
    if rotation_deg not in _COS_SIN:
        raise InvalidInputError(f"rotation must be one of {ROTATIONS}, got {rotation_deg}")
    if size < 1:
        raise InvalidInputError(f"patch size must be positive, got {size}")
    center = np.asarray(center, dtype=np.float64)
    offset = center - size / 2.0

    window = offset + np.array([[0, 0], [size, 0], [size, size], [0, size]], dtype=np.float64)
    src = unrotate_points(window, center, rotation_deg)
    if (src.min() < -_EPS or np.any(src[:, 0] > img.width + _EPS) or np.any(src[:, 1] > img.height + _EPS)):
        raise InvalidInputError(
            f"{size}px window at {tuple(center)} rotated {rotation_deg} deg leaves the {img.width}x{img.height} image"
        )

    jj, ii = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5)
    q = np.stack([offset[0] + jj.ravel(), offset[1] + ii.ravel()], axis=1)
    p = unrotate_points(q, center, rotation_deg)
    data = _bilinear(img.data, p[:, 0], p[:, 1]).reshape(size, size, img.channels)

    objects = []
    for obj in ann.objects:
        b = _map_box(obj.box, center, rotation_deg, offset, size)
        if b is not None:
            objects.append(LabeledBox(b, obj.class_id))
    out_ann = replace(ann, filename=filename or ann.filename, width=size, height=size, objects=objects)
    return ImageBuffer(data, img.maxval), out_ann
