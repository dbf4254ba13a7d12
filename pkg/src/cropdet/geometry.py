"""Box arithmetic, anchor pyramids, box coding, target assignment and NMS.

Coordinates are continuous pixels with the origin at the top-left corner,
x to the right and y downwards. Array forms are ``(N, 4)`` in
``(xmin, ymin, xmax, ymax)`` order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError, InvalidInputError

CLASS_NAMES = ("healthy", "stressed")
HEALTHY, STRESSED = 0, 1

# Backbone downsampling factor of C5; input sizes must be multiples of it.
SIZE_MULTIPLE = 32


@dataclass(frozen=True)
class Box:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"non-finite box coordinates {vals}")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise InvalidInputError(f"degenerate box {vals}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "Box":
        return cls(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


@dataclass(frozen=True)
class LabeledBox:
    box: Box
    class_id: int
    score: Optional[float] = None

    def __post_init__(self):
        if self.class_id not in range(len(CLASS_NAMES)):
            raise InvalidInputError(f"unknown class id {self.class_id}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise InvalidInputError(f"score {self.score} outside [0, 1]")


class RegressionDeltas(NamedTuple):
    tx: float
    ty: float
    tw: float
    th: float


@dataclass(frozen=True)
class AnchorConfig:
    input_size: tuple[int, int] = (672, 672)
    level_strides: tuple[int, ...] = (4, 8, 16, 32, 64)
    level_sizes: tuple[float, ...] = (16, 32, 64, 128, 256)
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)

    def __post_init__(self):
        h, w = self.input_size
        if h <= 0 or w <= 0 or h % SIZE_MULTIPLE or w % SIZE_MULTIPLE:
            raise ConfigError(f"input size {self.input_size} must be positive multiples of {SIZE_MULTIPLE}")
        if len(self.level_sizes) != len(self.level_strides):
            raise ConfigError("need exactly one anchor size per pyramid level")
        prev = 0
        for s in self.level_strides:
            if s <= prev or s & (s - 1):
                raise ConfigError(f"strides must be strictly increasing powers of two: {self.level_strides}")
            prev = s
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ConfigError(f"ratios must be positive: {self.ratios}")
        if any(z <= 0 for z in self.level_sizes):
            raise ConfigError(f"anchor sizes must be positive: {self.level_sizes}")

    @property
    def num_anchors_per_cell(self) -> int:
        return len(self.ratios)

    def grid_shapes(self) -> list[tuple[int, int]]:
        h, w = self.input_size
        return [(-(-h // s), -(-w // s)) for s in self.level_strides]


@dataclass
class AnchorAssignment:
    """Per-anchor labels: 1 positive, 0 negative, -1 ignore."""

    labels: np.ndarray
    matched: np.ndarray = field(repr=False)

    POSITIVE = 1
    NEGATIVE = 0
    IGNORE = -1

    @property
    def positive(self) -> np.ndarray:
        return self.labels == self.POSITIVE

    @property
    def num_positive(self) -> int:
        return int(np.count_nonzero(self.positive))


def as_array(boxes) -> np.ndarray:
    """Coerce a sequence of Box / LabeledBox / 4-tuples into an ``(N, 4)`` float array."""
    rows = []
    for b in boxes:
        if isinstance(b, LabeledBox):
            b = b.box
        rows.append(b.as_tuple() if isinstance(b, Box) else tuple(b))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def box_iou(a: Box, b: Box) -> float:
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    if np.any(area_a <= 0) or np.any(area_b <= 0):
        raise InvalidInputError("degenerate box in IoU input")
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def generate_anchors(cfg: AnchorConfig) -> list[np.ndarray]:
    """Anchors per pyramid level, each ``(gh * gw * A, 4)``.

    Ordering is row-major over grid cells, then ratio order within a cell,
    which is also the flattening order of the detection heads.
    """
    sqrt_r = np.sqrt(np.asarray(cfg.ratios, dtype=np.float64))
    levels = []
    for stride, size, (gh, gw) in zip(cfg.level_strides, cfg.level_sizes, cfg.grid_shapes()):
        ws = size * sqrt_r
        hs = size / sqrt_r
        cy, cx = np.meshgrid((np.arange(gh) + 0.5) * stride, (np.arange(gw) + 0.5) * stride, indexing="ij")
        cx = cx.reshape(-1, 1)
        cy = cy.reshape(-1, 1)
        level = np.stack([cx - ws / 2, cy - hs / 2, cx + ws / 2, cy + hs / 2], axis=-1)
        levels.append(level.reshape(-1, 4))
    return levels


def anchor_counts(cfg: AnchorConfig) -> list[int]:
    return [gh * gw * cfg.num_anchors_per_cell for gh, gw in cfg.grid_shapes()]


def _center_form(boxes: np.ndarray):
    w = boxes[..., 2] - boxes[..., 0]
    h = boxes[..., 3] - boxes[..., 1]
    return boxes[..., 0] + 0.5 * w, boxes[..., 1] + 0.5 * h, w, h


def encode_boxes(anchors: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Vectorised :func:`encode_box`; returns ``(N, 4)`` deltas."""
    xa, ya, wa, ha = _center_form(np.asarray(anchors, dtype=np.float64))
    xg, yg, wg, hg = _center_form(np.asarray(gt, dtype=np.float64))
    if np.any(wa <= 0) or np.any(ha <= 0) or np.any(wg <= 0) or np.any(hg <= 0):
        raise InvalidInputError("non-positive box size in encode")
    return np.stack([(xg - xa) / wa, (yg - ya) / ha, np.log(wg / wa), np.log(hg / ha)], axis=-1)


def decode_boxes(anchors: np.ndarray, deltas: np.ndarray, image_bounds=None) -> np.ndarray:
    """Inverse of :func:`encode_boxes`.

    ``image_bounds`` is ``(height, width)``; when given, results are clipped
    to ``[0, width] x [0, height]``. Overflowing size terms saturate to the
    bounds with a ``RuntimeWarning``. Clipping may produce empty boxes.
    """
    xa, ya, wa, ha = _center_form(np.asarray(anchors, dtype=np.float64))
    d = np.asarray(deltas, dtype=np.float64)
    with np.errstate(over="ignore"):
        w = wa * np.exp(d[..., 2])
        h = ha * np.exp(d[..., 3])
    cx = xa + d[..., 0] * wa
    cy = ya + d[..., 1] * ha
    out = np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)
    if not np.all(np.isfinite(out)):
        if image_bounds is None:
            raise InvalidInputError("box size overflow while decoding without image bounds")
        warnings.warn("box delta overflow; saturating to image bounds", RuntimeWarning, stacklevel=2)
    if image_bounds is not None:
        height, width = image_bounds
        out[..., 0::2] = np.clip(out[..., 0::2], 0.0, width)
        out[..., 1::2] = np.clip(out[..., 1::2], 0.0, height)
    return out


def encode_box(anchor: Box, gt: Box) -> RegressionDeltas:
    return RegressionDeltas(*encode_boxes(np.array(anchor.as_tuple()), np.array(gt.as_tuple())).tolist())


def decode_box(anchor: Box, d: RegressionDeltas, image_bounds=None) -> Box:
    out = decode_boxes(np.array(anchor.as_tuple()), np.array(tuple(d)), image_bounds)
    return Box(*out.tolist())


def nms_indices(boxes: np.ndarray, scores: np.ndarray, class_ids=None, iou_thresh: float = 0.3) -> np.ndarray:
    """Greedy NMS over arrays; returns kept indices in descending-score order.

    A box is suppressed when its IoU with an already kept box of the same
    class exceeds ``iou_thresh``. Pass ``class_ids=None`` for class-agnostic
    suppression. Equal scores keep insertion order.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    if len(boxes) == 0:
        return np.zeros(0, dtype=np.intp)
    classes = np.zeros(len(boxes), dtype=np.int64) if class_ids is None else np.asarray(class_ids)
    order = np.argsort(-scores, kind="stable")
    x1, y1, x2, y2 = boxes.T
    areas = (x2 - x1) * (y2 - y1)
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        iou = inter / (areas[i] + areas[rest] - inter)
        suppressed = (iou > iou_thresh) & (classes[rest] == classes[i])
        order = rest[~suppressed]
    return np.asarray(keep, dtype=np.intp)


def nms(dets: Sequence[LabeledBox], iou_thresh: float = 0.3, per_class: bool = True) -> list[LabeledBox]:
    if not dets:
        return []
    if any(d.score is None for d in dets):
        raise InvalidInputError("nms needs scored detections")
    keep = nms_indices(
        as_array(dets),
        np.array([d.score for d in dets]),
        np.array([d.class_id for d in dets]) if per_class else None,
        iou_thresh,
    )
    return [dets[i] for i in keep]


def assign_targets(anchors: np.ndarray, gt: Sequence[LabeledBox], pos_thresh: float = 0.5,
                   neg_thresh: float = 0.4) -> AnchorAssignment:
    """Label anchors positive / negative / ignore by max IoU with ground truth.

    Ground-truth boxes that reach no anchor at ``pos_thresh`` are force-matched
    to their best anchor, provided that anchor overlaps them at all.
    """
    if not 0.0 <= neg_thresh <= pos_thresh <= 1.0:
        raise ConfigError(f"need 0 <= neg_thresh <= pos_thresh <= 1, got {neg_thresh}, {pos_thresh}")
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    n = len(anchors)
    labels = np.zeros(n, dtype=np.int8)
    matched = np.full(n, -1, dtype=np.int64)
    if not gt:
        return AnchorAssignment(labels, matched)

    iou = iou_matrix(anchors, as_array(gt))
    best_gt = iou.argmax(axis=1)
    best_iou = iou[np.arange(n), best_gt]
    pos = best_iou >= pos_thresh
    labels[(best_iou >= neg_thresh) & ~pos] = AnchorAssignment.IGNORE
    labels[pos] = AnchorAssignment.POSITIVE
    matched[pos] = best_gt[pos]

    for g in range(iou.shape[1]):
        col = iou[:, g]
        if np.any(col >= pos_thresh):
            continue
        a = int(col.argmax())
        if col[a] > 0:
            labels[a] = AnchorAssignment.POSITIVE
            matched[a] = g
    return AnchorAssignment(labels, matched)
