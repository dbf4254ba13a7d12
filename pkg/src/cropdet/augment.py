"""Photometric augmentations and their application to a training manifest."""

from __future__ import annotations

import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, CropDetError
from .dataio.annotations import read_annotation, save_annotation
from .dataio.manifest import DatasetManifest, ManifestIssue
from .dataio.pnm import ImageBuffer, read_image, write_image

VARIANTS = ("rescale", "gamma", "sigmoid", "noise")


@dataclass(frozen=True)
class AugmentSpec:
    lo: float = 0.2
    hi: float = 99.8
    gamma: float = 0.8
    gamma_gain: float = 0.8
    sigmoid_cutoff: float = 0.5
    sigmoid_gain: float = 10.0
    noise_mean: float = 0.0
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.lo < self.hi <= 100:
            raise ConfigError(f"need 0 <= lo < hi <= 100, got {self.lo}, {self.hi}")
        for name in ("gamma", "gamma_gain", "sigmoid_gain", "noise_std"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")


def _values(img):
    if isinstance(img, ImageBuffer):
        return img.data, img.maxval
    return np.asarray(img, dtype=np.float64), None


def _wrap(out, maxval):
    return out if maxval is None else ImageBuffer(out, maxval)


def rescale_intensity(img, lo: float = 0.2, hi: float = 99.8):
    """Linear stretch between the ``lo`` and ``hi`` percentiles of all samples, clipped to [0, 1]."""
    v, maxval = _values(img)
    if v.size == 0:
        raise ConfigError("cannot rescale an empty image")
    p_lo, p_hi = np.percentile(v, [lo, hi])
    if p_hi == p_lo:
        return _wrap(np.zeros_like(v), maxval)
    return _wrap(np.clip((v - p_lo) / (p_hi - p_lo), 0.0, 1.0), maxval)


def adjust_gamma(img, gamma: float = 0.8, gain: float = 0.8):
    v, maxval = _values(img)
    return _wrap(np.clip(gain * v ** gamma, 0.0, 1.0), maxval)


def adjust_sigmoid(img, cutoff: float = 0.5, gain: float = 10.0):
    v, maxval = _values(img)
    return _wrap(1.0 / (1.0 + np.exp(gain * (cutoff - v))), maxval)


def image_rng(seed: int, index: int) -> np.random.Generator:
    """Per-image generator; independent of processing order."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def add_gaussian_noise(img, mean: float = 0.0, std: float = 0.1, seed=0):
    """i.i.d. normal noise per sample (channels independent), clipped to [0, 1].

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if std <= 0:
        raise ConfigError(f"noise std must be > 0, got {std}")
    v, maxval = _values(img)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _wrap(np.clip(v + rng.normal(mean, std, size=v.shape), 0.0, 1.0), maxval)


def augment_image(img: ImageBuffer, spec: AugmentSpec, index: int = 0) -> dict[str, ImageBuffer]:
    return {
        "rescale": rescale_intensity(img, spec.lo, spec.hi),
        "gamma": adjust_gamma(img, spec.gamma, spec.gamma_gain),
        "sigmoid": adjust_sigmoid(img, spec.sigmoid_cutoff, spec.sigmoid_gain),
        "noise": add_gaussian_noise(img, spec.noise_mean, spec.noise_std, image_rng(spec.seed, index)),
    }


def _augment_one(index: int, image_path: Path, ann_path: Path, spec: AugmentSpec, out_dir: Path, class_map):
    img = read_image(image_path)
    ann = read_annotation(ann_path, class_map)
    stem, ext = image_path.stem, image_path.suffix
    shutil.copyfile(image_path, out_dir / image_path.name)
    save_annotation(replace(ann, filename=image_path.name), out_dir / f"{stem}.xml", class_map)
    pairs = [(out_dir / image_path.name, out_dir / f"{stem}.xml")]
    for name, variant in augment_image(img, spec, index).items():
        new_img = out_dir / f"{stem}-{name}{ext}"
        new_ann = out_dir / f"{stem}-{name}.xml"
        write_image(variant, new_img)
        save_annotation(replace(ann, filename=new_img.name), new_ann, class_map)
        pairs.append((new_img, new_ann))
    return pairs


def augment_dataset(manifest: DatasetManifest, spec: AugmentSpec, out_dir, jobs: Optional[int] = 1
                    ) -> DatasetManifest:
    """Write the original plus four photometric variants of every image.

    Annotations are copied with boxes untouched. Per-file failures are
    recorded as manifest issues and processing continues.
    """
    if manifest.split != "train":
        raise ConfigError(f"augmentation only applies to the training split, got {manifest.split!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(item):
        i, (img_path, ann_path) = item
        try:
            return _augment_one(i, Path(img_path), Path(ann_path), spec, out_dir, manifest.class_map), None
        except (CropDetError, OSError) as exc:
            return [], ManifestIssue(str(img_path), str(exc), "error")

    items = list(enumerate(manifest.pairs))
    if jobs and jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]

    pairs, issues = [], list(manifest.issues)
    for produced, issue in results:
        pairs.extend(produced)
        if issue is not None:
            issues.append(issue)
    return DatasetManifest(manifest.split, tuple(pairs), dict(manifest.class_map), tuple(issues))
