"""Dataset manifests: image/annotation pairs matched by basename.

Manifest files are tab-separated text. Lines starting with ``#`` are
metadata (``# split=train``, ``# class=healthy=0``); every other line is
``<image path>\t<annotation path>``. Relative paths resolve against the
manifest's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..errors import AnnotationParseError, ImageIOError
from .annotations import DEFAULT_CLASS_MAP

IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm", ".pam")
ANNOTATION_SUFFIX = ".xml"


@dataclass(frozen=True)
class ManifestIssue:
    path: str
    message: str
    severity: str = "warning"

    def __str__(self):
        return f"{self.severity}\t{self.path}\t{self.message}"


@dataclass(frozen=True)
class DatasetManifest:
    split: str
    pairs: tuple[tuple[Path, Path], ...]
    class_map: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_MAP))
    issues: tuple[ManifestIssue, ...] = ()

    def __len__(self):
        return len(self.pairs)

    def image_ids(self) -> list[str]:
        return [img.stem for img, _ in self.pairs]


def scan_dataset(root, split: str = "train", class_map=None) -> DatasetManifest:
    root = Path(root)
    if not root.is_dir():
        raise ImageIOError(f"{root}: not a readable directory")
    images, annotations = {}, {}
    for p in sorted(root.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES:
            images[p.stem] = p
        elif p.suffix.lower() == ANNOTATION_SUFFIX:
            annotations[p.stem] = p
    pairs, issues = [], []
    for stem in sorted(images):
        if stem in annotations:
            pairs.append((images[stem], annotations[stem]))
        else:
            issues.append(ManifestIssue(str(images[stem]), "image has no annotation"))
    for stem in sorted(set(annotations) - set(images)):
        issues.append(ManifestIssue(str(annotations[stem]), "annotation has no image"))
    return DatasetManifest(split, tuple(pairs), dict(class_map or DEFAULT_CLASS_MAP), tuple(issues))


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = [f"# split={manifest.split}"]
    lines += [f"# class={name}={cid}" for name, cid in sorted(manifest.class_map.items(), key=lambda kv: kv[1])]

    def rel(p: Path) -> str:
        try:
            return p.resolve().relative_to(base).as_posix()
        except ValueError:
            return str(p)

    lines += [f"{rel(img)}\t{rel(ann)}" for img, ann in manifest.pairs]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path, check_exists: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror}") from exc
    split: Optional[str] = None
    class_map = {}
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key == "split":
                split = value
            elif key == "class":
                name, _, cid = value.rpartition("=")
                try:
                    class_map[name] = int(cid)
                except ValueError:
                    raise AnnotationParseError(f"bad class entry {value!r}", path, line=lineno) from None
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise AnnotationParseError("expected '<image>\\t<annotation>'", path, line=lineno)
        img, ann = ((path.parent / p) for p in parts)
        if check_exists:
            for p in (img, ann):
                if not p.exists():
                    raise ImageIOError(f"{path}:{lineno}: {p} does not exist")
        pairs.append((img, ann))
    return DatasetManifest(split or "train", tuple(pairs), class_map or dict(DEFAULT_CLASS_MAP))
