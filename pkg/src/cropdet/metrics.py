"""Pixel-wise evaluation of box detections.

Ground-truth and predicted boxes are rasterised per class and compared
pixel by pixel. A pixel ``(row i, col j)`` belongs to a box when
``floor(xmin) <= j <= floor(xmax) - 1`` and ``floor(ymin) <= i <= floor(ymax) - 1``.
This integer convention is separate from the continuous box IoU in
:mod:`cropdet.geometry`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import CLASS_NAMES, Box, LabeledBox


class PixelGrid(NamedTuple):
    height: int
    width: int


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class ClassMetrics:
    dsc: float
    iou: float
    precision: float
    recall: float
    counts: ConfusionCounts = ConfusionCounts()

    @property
    def absent(self) -> bool:
        """No ground truth and no prediction: the all-ones convention applied."""
        c = self.counts
        return c.tp == c.fp == c.fn == 0


@dataclass
class MetricsReport:
    per_class: dict[int, ClassMetrics]
    macro_dsc: float
    mode: str = "micro"
    per_image: list = field(default_factory=list)


def rasterize(boxes: Iterable, grid: PixelGrid) -> np.ndarray:
    height, width = grid
    if height <= 0 or width <= 0:
        raise InvalidInputError(f"pixel grid must be positive, got {grid}")
    mask = np.zeros((height, width), dtype=bool)
    for b in boxes:
        if isinstance(b, LabeledBox):
            b = b.box
        x0, y0, x1, y1 = b.as_tuple() if isinstance(b, Box) else b
        c0 = max(math.floor(x0), 0)
        c1 = min(math.floor(x1), width)
        r0 = max(math.floor(y0), 0)
        r1 = min(math.floor(y1), height)
        if c1 > c0 and r1 > r0:
            mask[r0:r1, c0:c1] = True
    return mask


def pixel_confusion(gt: Sequence[LabeledBox], pred: Sequence[LabeledBox], grid: PixelGrid,
                    num_classes: int = len(CLASS_NAMES)) -> dict[int, ConfusionCounts]:
    out = {}
    for c in range(num_classes):
        g = rasterize([b for b in gt if b.class_id == c], grid)
        p = rasterize([b for b in pred if b.class_id == c], grid)
        out[c] = ConfusionCounts(
            tp=int(np.count_nonzero(g & p)),
            fp=int(np.count_nonzero(p & ~g)),
            fn=int(np.count_nonzero(g & ~p)),
        )
    return out


def compute_metrics(c: ConfusionCounts) -> ClassMetrics:
    tp, fp, fn = c.tp, c.fp, c.fn
    if min(tp, fp, fn) < 0:
        raise InvalidInputError(f"negative confusion counts {c}")
    if tp == fp == fn == 0:
        return ClassMetrics(1.0, 1.0, 1.0, 1.0, c)
    if tp == 0:
        return ClassMetrics(0.0, 0.0, 0.0, 0.0, c)
    return ClassMetrics(
        dsc=2 * tp / (2 * tp + fp + fn),
        iou=tp / (tp + fp + fn),
        precision=tp / (tp + fp),
        recall=tp / (tp + fn),
        counts=c,
    )


def _macro(per_class: Mapping[int, ClassMetrics]) -> float:
    return sum(m.dsc for m in per_class.values()) / len(per_class)


def aggregate(per_image: Sequence[Mapping[int, ConfusionCounts]], mode: str = "micro") -> MetricsReport:
    """Combine per-image counts into a report.

    ``micro`` pools pixel counts over images before computing ratios;
    ``per-image`` averages each image's ratios. Either way the DSC is then
    macro-averaged across classes.
    """
    if not per_image:
        raise InvalidInputError("cannot aggregate zero images")
    classes = sorted({c for counts in per_image for c in counts})
    if mode == "micro":
        per_class = {}
        for c in classes:
            total = ConfusionCounts()
            for counts in per_image:
                total = total + counts.get(c, ConfusionCounts())
            per_class[c] = compute_metrics(total)
    elif mode == "per-image":
        per_class = {}
        for c in classes:
            ms = [compute_metrics(counts.get(c, ConfusionCounts())) for counts in per_image]
            total = ConfusionCounts()
            for counts in per_image:
                total = total + counts.get(c, ConfusionCounts())
            per_class[c] = ClassMetrics(
                *(float(np.mean([getattr(m, f) for m in ms])) for f in ("dsc", "iou", "precision", "recall")),
                counts=total,
            )
    else:
        raise InvalidInputError(f"unknown aggregation mode {mode!r}")
    return MetricsReport(per_class, _macro(per_class), mode)


REPORT_COLUMNS = ("class", "dsc", "iou", "precision", "recall", "tp", "fp", "fn", "absent")


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def format_report(report: MetricsReport, class_names=CLASS_NAMES) -> str:
    """Tab-separated report: header, one row per class, then ``macro_average``.

    The macro row carries the class-averaged value of each ratio and summed
    counts; ``absent`` is 1 when a class had neither ground truth nor
    predictions and therefore scored 1.0 by convention.
    """
    lines = [f"# mode={report.mode}", "\t".join(REPORT_COLUMNS)]
    total = ConfusionCounts()
    for c, m in sorted(report.per_class.items()):
        total = total + m.counts
        lines.append("\t".join([
            class_names[c], _fmt(m.dsc), _fmt(m.iou), _fmt(m.precision), _fmt(m.recall),
            str(m.counts.tp), str(m.counts.fp), str(m.counts.fn), str(int(m.absent)),
        ]))
    ms = list(report.per_class.values())
    mean = lambda f: sum(getattr(m, f) for m in ms) / len(ms)  # noqa: E731
    lines.append("\t".join([
        "macro_average", _fmt(report.macro_dsc), _fmt(mean("iou")), _fmt(mean("precision")),
        _fmt(mean("recall")), str(total.tp), str(total.fp), str(total.fn), "0",
    ]))
    return "\n".join(lines) + "\n"


def format_per_image(image_ids: Sequence[str], per_image: Sequence[Mapping[int, ConfusionCounts]],
                     class_names=CLASS_NAMES) -> str:
    lines = ["\t".join(("image_id",) + REPORT_COLUMNS)]
    for image_id, counts in zip(image_ids, per_image):
        for c, cc in sorted(counts.items()):
            m = compute_metrics(cc)
            lines.append("\t".join([
                image_id, class_names[c], _fmt(m.dsc), _fmt(m.iou), _fmt(m.precision), _fmt(m.recall),
                str(cc.tp), str(cc.fp), str(cc.fn), str(int(m.absent)),
            ]))
    return "\n".join(lines) + "\n"
