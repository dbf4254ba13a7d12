"""Detections interchange table.

Tab-separated, one header row then one box per line::

    image_id  class  score  xmin  ymin  xmax  ymax

Field order is fixed. Numbers are written so that reading them back gives
the identical float.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

from ..errors import AnnotationParseError, ImageIOError, InvalidInputError
from ..geometry import Box, LabeledBox
from .annotations import DEFAULT_CLASS_MAP, format_number

HEADER = ("image_id", "class", "score", "xmin", "ymin", "xmax", "ymax")


def format_detections(rows: Sequence[tuple[str, LabeledBox]], class_map: Mapping[str, int] = DEFAULT_CLASS_MAP) -> str:
    names = {v: k for k, v in class_map.items()}
    lines = ["\t".join(HEADER)]
    for image_id, det in rows:
        score = "" if det.score is None else format_number(det.score)
        coords = [format_number(v) for v in det.box.as_tuple()]
        lines.append("\t".join([image_id, names[det.class_id], score, *coords]))
    return "\n".join(lines) + "\n"


def parse_detections(text: str, class_map: Mapping[str, int] = DEFAULT_CLASS_MAP,
                     source=None) -> list[tuple[str, LabeledBox]]:
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != HEADER:
        raise AnnotationParseError(f"header must be {' '.join(HEADER)!r}", source, line=1)
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(HEADER):
            raise AnnotationParseError(f"expected {len(HEADER)} fields, got {len(parts)}", source, line=lineno)
        image_id, name, score, *coords = parts
        if name not in class_map:
            raise AnnotationParseError(f"unknown class name {name!r}", source, line=lineno)
        try:
            box = Box(*(float(c) for c in coords))
            det = LabeledBox(box, class_map[name], float(score) if score else None)
        except (ValueError, InvalidInputError) as exc:
            raise AnnotationParseError(str(exc), source, line=lineno) from None
        rows.append((image_id, det))
    return rows


def read_detections(path, class_map=DEFAULT_CLASS_MAP) -> list[tuple[str, LabeledBox]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror}") from exc
    return parse_detections(text, class_map, source=path)


def write_detections(rows, path, class_map=DEFAULT_CLASS_MAP) -> None:
    Path(path).write_text(format_detections(rows, class_map), encoding="utf-8")


def group_by_image(rows) -> dict[str, list[LabeledBox]]:
    out: dict[str, list[LabeledBox]] = {}
    for image_id, det in rows:
        out.setdefault(image_id, []).append(det)
    return out
