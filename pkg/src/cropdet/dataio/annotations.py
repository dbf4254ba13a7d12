"""LabelImg / Pascal VOC annotation files."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from ..errors import AnnotationParseError, InvalidInputError
from ..geometry import CLASS_NAMES, Box, LabeledBox

DEFAULT_CLASS_MAP = {name: i for i, name in enumerate(CLASS_NAMES)}


@dataclass
class Annotation:
    filename: str
    width: int
    height: int
    depth: int = 3
    objects: list[LabeledBox] = field(default_factory=list)
    folder: str = ""

    def __post_init__(self):
        for obj in self.objects:
            b = obj.box
            if b.xmin < 0 or b.ymin < 0 or b.xmax > self.width or b.ymax > self.height:
                raise InvalidInputError(f"box {b.as_tuple()} outside {self.width}x{self.height} image")


def format_number(v: float) -> str:
    """Integral values print as integers, everything else round-trips via repr."""
    v = float(v)
    if v.is_integer():
        return str(int(v))
    return repr(v)


def _text(parent: ET.Element, tag: str, path: str, source) -> str:
    node = parent.find(tag)
    if node is None or node.text is None or not node.text.strip():
        raise AnnotationParseError(f"missing required element <{tag}>", source, element=f"{path}/{tag}")
    return node.text.strip()


def _number(parent, tag, path, source, cast=float):
    raw = _text(parent, tag, path, source)
    try:
        value = float(raw)
    except ValueError:
        raise AnnotationParseError(f"non-numeric value {raw!r}", source, element=f"{path}/{tag}") from None
    if not math.isfinite(value):
        raise AnnotationParseError(f"non-finite value {raw!r}", source, element=f"{path}/{tag}")
    if cast is int:
        if not value.is_integer():
            raise AnnotationParseError(f"expected an integer, got {raw!r}", source, element=f"{path}/{tag}")
        return int(value)
    return value


def parse_annotation(text: str, class_map: Optional[Mapping[str, int]] = None, source=None) -> Annotation:
    class_map = DEFAULT_CLASS_MAP if class_map is None else class_map
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line = exc.position[0] if getattr(exc, "position", None) else None
        raise AnnotationParseError(f"malformed XML: {exc}", source, line=line) from None
    if root.tag != "annotation":
        raise AnnotationParseError(f"root element is <{root.tag}>, expected <annotation>", source, element=root.tag)

    filename = root.findtext("filename", default="").strip()
    folder = root.findtext("folder", default="").strip()
    size = root.find("size")
    if size is None:
        raise AnnotationParseError("missing required element <size>", source, element="annotation/size")
    width = _number(size, "width", "size", source, int)
    height = _number(size, "height", "size", source, int)
    depth = _number(size, "depth", "size", source, int) if size.find("depth") is not None else 3
    if width <= 0 or height <= 0:
        raise AnnotationParseError(f"non-positive image size {width}x{height}", source, element="size")

    objects = []
    for i, obj in enumerate(root.findall("object"), 1):
        path = f"object[{i}]"
        name = _text(obj, "name", path, source)
        if name not in class_map:
            raise AnnotationParseError(
                f"unknown class name {name!r} (known: {', '.join(sorted(class_map))})", source, element=f"{path}/name"
            )
        bnd = obj.find("bndbox")
        if bnd is None:
            raise AnnotationParseError("missing required element <bndbox>", source, element=f"{path}/bndbox")
        bpath = f"{path}/bndbox"
        xmin, ymin, xmax, ymax = (_number(bnd, t, bpath, source) for t in ("xmin", "ymin", "xmax", "ymax"))
        if xmin >= xmax or ymin >= ymax:
            raise AnnotationParseError(
                f"inverted or empty box ({format_number(xmin)}, {format_number(ymin)}, "
                f"{format_number(xmax)}, {format_number(ymax)})", source, element=bpath,
            )
        if xmin < 0 or ymin < 0 or xmax > width or ymax > height:
            raise AnnotationParseError(f"box exceeds the {width}x{height} image", source, element=bpath)
        objects.append(LabeledBox(Box(xmin, ymin, xmax, ymax), class_map[name]))
    return Annotation(filename, width, height, depth, objects, folder)


def write_annotation(a: Annotation, class_map: Optional[Mapping[str, int]] = None) -> str:
    class_map = DEFAULT_CLASS_MAP if class_map is None else class_map
    names = {v: k for k, v in class_map.items()}
    root = ET.Element("annotation")
    ET.SubElement(root, "folder").text = a.folder
    ET.SubElement(root, "filename").text = a.filename
    size = ET.SubElement(root, "size")
    for tag, v in (("width", a.width), ("height", a.height), ("depth", a.depth)):
        ET.SubElement(size, tag).text = str(v)
    ET.SubElement(root, "segmented").text = "0"
    for obj in a.objects:
        node = ET.SubElement(root, "object")
        ET.SubElement(node, "name").text = names[obj.class_id]
        ET.SubElement(node, "pose").text = "Unspecified"
        ET.SubElement(node, "truncated").text = "0"
        ET.SubElement(node, "difficult").text = "0"
        bnd = ET.SubElement(node, "bndbox")
        for tag, v in zip(("xmin", "ymin", "xmax", "ymax"), obj.box.as_tuple()):
            ET.SubElement(bnd, tag).text = format_number(v)
    ET.indent(root, space="\t")
    return ET.tostring(root, encoding="unicode") + "\n"


def read_annotation(path, class_map=None) -> Annotation:
    path = Path(path)
    return parse_annotation(path.read_text(encoding="utf-8"), class_map, source=path)


def save_annotation(a: Annotation, path, class_map=None) -> None:
    Path(path).write_text(write_annotation(a, class_map), encoding="utf-8")
