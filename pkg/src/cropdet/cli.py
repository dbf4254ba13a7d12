"""Command-line front end.

Exit status: 0 success, 2 configuration error, 3 parse error, 4 I/O error,
5 invariant / shape failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import geometry
from .augment import AugmentSpec, augment_dataset
from .dataio import (
    BandSelection,
    compose_bands,
    format_detections,
    load_manifest,
    read_annotation,
    read_detections,
    read_image,
    scan_dataset,
    write_detections,
    write_image,
    write_manifest,
)
from .dataio.detections import group_by_image
from .errors import (
    EXIT_CONFIG,
    EXIT_INVARIANT,
    EXIT_IO,
    EXIT_OK,
    EXIT_PARSE,
    AnnotationParseError,
    ConfigError,
    CropDetError,
    InvalidInputError,
    ShapeError,
)
from .geometry import AnchorConfig, LabeledBox
from .metrics import PixelGrid, aggregate, format_per_image, format_report, pixel_confusion
from .network import PYRAMID_CHANNELS, ConvSpec, RetinaUNetAg, save_weights
from .network.model import postprocess_raw
from .overlay import draw_overlay

log = logging.getLogger("cropdet")

JOBS_ENV = "CROPDET_JOBS"


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _class_map(text: str) -> dict[str, int]:
    out = {}
    for item in text.split(","):
        name, _, cid = item.partition("=")
        try:
            out[name.strip()] = int(cid)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad class map entry {item!r}") from None
    return out


def _size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}") from None
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2:
        raise argparse.ArgumentTypeError(f"bad size {text!r}")
    return dims


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def _load_dataset(path: Path, class_map=None):
    path = Path(path)
    if path.is_dir():
        return scan_dataset(path, class_map=class_map)
    return load_manifest(path)


# -- commands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    manifest = scan_dataset(args.root, class_map=args.class_map)
    errors = 0
    lines = [str(issue) for issue in manifest.issues]
    for _, ann_path in manifest.pairs:
        try:
            read_annotation(ann_path, manifest.class_map)
        except AnnotationParseError as exc:
            errors += 1
            lines.append(f"error\t{exc}")
    for line in lines:
        print(line)
    log.info("%d pairs, %d errors, %d warnings", len(manifest), errors, len(manifest.issues))
    return EXIT_PARSE if errors else EXIT_OK


def cmd_augment(args) -> int:
    manifest = _load_dataset(args.dataset, args.class_map)
    spec = AugmentSpec(args.lo, args.hi, args.gamma, args.gamma_gain, args.sigmoid_cutoff, args.sigmoid_gain,
                       args.noise_mean, args.noise_std, args.seed)
    out = augment_dataset(manifest, spec, args.out, jobs=args.jobs)
    write_manifest(out, Path(args.out) / "manifest.tsv")
    failed = [i for i in out.issues if i.severity == "error"]
    for issue in out.issues:
        print(issue, file=sys.stderr)
    print(f"wrote {len(out)} images for {len(manifest)} sources")
    return EXIT_IO if failed else EXIT_OK


def _anchor_config(args) -> AnchorConfig:
    kwargs = {"input_size": tuple(args.size)}
    if args.anchor_sizes:
        kwargs["level_sizes"] = tuple(args.anchor_sizes)
    if args.ratios:
        kwargs["ratios"] = tuple(args.ratios)
    return AnchorConfig(**kwargs)


def cmd_anchors(args) -> int:
    cfg = _anchor_config(args)
    counts = geometry.anchor_counts(cfg)
    print("level\tstride\tsize\tgrid_h\tgrid_w\tanchors")
    for i, ((gh, gw), n) in enumerate(zip(cfg.grid_shapes(), counts)):
        print(f"P{i + 2}\t{cfg.level_strides[i]}\t{cfg.level_sizes[i]:g}\t{gh}\t{gw}\t{n}")
    print(f"total\t\t\t\t\t{sum(counts)}")
    if args.dump:
        with open(args.dump, "w") as fh:
            fh.write("level\tindex\txmin\tymin\txmax\tymax\n")
            for i, level in enumerate(geometry.generate_anchors(cfg)):
                for j, b in enumerate(level):
                    fh.write(f"P{i + 2}\t{j}\t" + "\t".join(repr(float(v)) for v in b) + "\n")
    if args.figure:
        from .plotting import plot_anchors

        plot_anchors(cfg, args.figure)
    return EXIT_OK


def cmd_postprocess(args) -> int:
    rows = read_detections(args.detections)
    out = []
    for image_id, dets in group_by_image(rows).items():
        if any(d.score is None for d in dets):
            raise AnnotationParseError(f"image {image_id}: detections need scores", args.detections)
        kept = [d for d in dets if d.score > args.score_thresh]
        kept = geometry.nms(kept, args.iou_thresh, per_class=not args.class_agnostic)
        out.extend((image_id, d) for d in kept)
    write_detections(out, args.out)
    print(f"{len(out)} of {len(rows)} detections kept")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = _load_dataset(args.dataset, args.class_map)
    dets = group_by_image(read_detections(args.detections, manifest.class_map))
    ids = manifest.image_ids()
    unknown = sorted(set(dets) - set(ids))
    if unknown:
        raise InvalidInputError(f"detections reference unknown image ids: {', '.join(unknown)}")
    per_image = []
    for image_id, (_, ann_path) in zip(ids, manifest.pairs):
        ann = read_annotation(ann_path, manifest.class_map)
        per_image.append(pixel_confusion(ann.objects, dets.get(image_id, []), PixelGrid(ann.height, ann.width),
                                         num_classes=len(manifest.class_map)))
    report = aggregate(per_image, args.mode)
    names = [name for name, _ in sorted(manifest.class_map.items(), key=lambda kv: kv[1])]
    text = format_report(report, names)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.per_image:
        Path(args.per_image).write_text(format_per_image(ids, per_image, names))
    if args.figure:
        from .plotting import plot_metrics

        plot_metrics(report, args.figure, names)
    return EXIT_OK


FAULTS = ("lateral_c2", "lateral_c3", "lateral_c4", "lateral_c5")


def _inject_fault(model: RetinaUNetAg, fault: str) -> None:
    key = f"pyramid.{fault}"
    spec = model.params[key]
    half = PYRAMID_CHANNELS // 2
    model.params[key] = ConvSpec(spec.weights[..., :half].copy(), spec.bias[:half].copy(), spec.stride)


def cmd_forward_check(args) -> int:
    if args.image:
        img = read_image(args.image).data
        image_id = Path(args.image).stem
    else:
        h, w = args.size
        img = np.random.default_rng(args.seed).random((h, w, 3))
        image_id = "random"
    h, w = img.shape[:2]
    cfg = AnchorConfig(input_size=(h, w))
    model = RetinaUNetAg(seed=args.seed, in_channels=img.shape[2], head_depth=args.head_depth)
    if args.fault:
        _inject_fault(model, args.fault)

    trace = []
    print("layer\theight\twidth\tchannels")
    try:
        raw = model.raw(img, trace)
    except ShapeError as exc:
        for name, shape in trace:
            print(f"{name}\t" + "\t".join(map(str, shape)))
        print(f"FAIL\t{exc}", file=sys.stderr)
        return EXIT_INVARIANT
    for name, shape in trace:
        print(f"{name}\t" + "\t".join(map(str, shape)))

    shapes = dict(trace)
    problems = []
    for i, stride in enumerate(cfg.level_strides):
        want = (-(-h // stride), -(-w // stride), PYRAMID_CHANNELS)
        got = shapes.get(f"P{i + 2}")
        if got != want:
            problems.append(f"P{i + 2} is {got}, expected {want}")
    expected = sum(geometry.anchor_counts(cfg))
    if len(raw) != expected:
        problems.append(f"{len(raw)} raw detections, expected {expected} anchors")
    print(f"raw_detections\t{len(raw)}")
    for p in problems:
        print(f"FAIL\t{p}", file=sys.stderr)
    if problems:
        return EXIT_INVARIANT

    if args.detections_out:
        anchors = np.concatenate(geometry.generate_anchors(cfg))
        dets = postprocess_raw(raw, anchors, (h, w), args.score_thresh, args.iou_thresh)
        write_detections([(image_id, d) for d in dets], args.detections_out)
    if args.save_weights:
        prefix = Path(args.save_weights)
        save_weights(model.params, prefix.with_suffix(".bin"), prefix.with_suffix(".manifest"))
    print("ok")
    return EXIT_OK


def cmd_overlay(args) -> int:
    img = read_image(args.image)
    image_id = args.image_id or Path(args.image).stem
    boxes = [d for i, d in read_detections(args.detections) if i == image_id]
    write_image(draw_overlay(img, boxes), args.out)
    sidecar = Path(str(args.out) + ".scores.tsv")
    sidecar.write_text(format_detections([(image_id, d) for d in boxes]))
    print(f"{len(boxes)} boxes drawn")
    return EXIT_OK


def cmd_compose_bands(args) -> int:
    sel = BandSelection.parse(args.bands)
    bands = [read_image(p) for p in (args.g, args.r, args.re, args.nir)]
    write_image(compose_bands(*bands, sel), args.out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="cropdet", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file whose entries act as flag defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    def class_map_opt(p):
        p.add_argument("--class-map", type=_class_map, default=None, help="e.g. healthy=0,stressed=1")

    p = add("validate", cmd_validate, "check a dataset directory")
    p.add_argument("root", type=Path)
    class_map_opt(p)

    p = add("augment", cmd_augment, "write the original plus four photometric variants per image")
    p.add_argument("dataset", type=Path, help="training dataset directory or manifest")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--lo", type=float, default=0.2)
    p.add_argument("--hi", type=float, default=99.8)
    p.add_argument("--gamma", type=float, default=0.8)
    p.add_argument("--gamma-gain", type=float, default=0.8)
    p.add_argument("--sigmoid-cutoff", type=float, default=0.5)
    p.add_argument("--sigmoid-gain", type=float, default=10.0)
    p.add_argument("--noise-mean", type=float, default=0.0)
    p.add_argument("--noise-std", type=float, default=0.1)
    class_map_opt(p)

    p = add("anchors", cmd_anchors, "summarise the anchor pyramid")
    p.add_argument("--size", type=_size, default=(672, 672), help="N or HxW")
    p.add_argument("--anchor-sizes", type=float, nargs="+")
    p.add_argument("--ratios", type=float, nargs="+")
    p.add_argument("--dump", type=Path, help="write every anchor to this file")
    p.add_argument("--figure", type=Path, help="PNG of the anchor shapes")

    p = add("postprocess", cmd_postprocess, "score filter and NMS over a detections table")
    p.add_argument("detections", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--score-thresh", type=_unit, default=0.7)
    p.add_argument("--iou-thresh", type=_unit, default=0.3)
    p.add_argument("--class-agnostic", action="store_true")

    p = add("eval", cmd_eval, "pixel-wise DSC / IoU / precision / recall")
    p.add_argument("dataset", type=Path, help="ground-truth directory or manifest")
    p.add_argument("detections", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--per-image", type=Path)
    p.add_argument("--mode", choices=("micro", "per-image"), default="micro")
    p.add_argument("--figure", type=Path, help="PNG bar chart of the report")
    class_map_opt(p)

    p = add("forward-check", cmd_forward_check, "run the forward graph and check every shape")
    p.add_argument("--size", type=_size, default=(672, 672))
    p.add_argument("--image", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--head-depth", type=int, default=4)
    p.add_argument("--fault", choices=FAULTS, help="corrupt a lateral conv's output channels")
    p.add_argument("--detections-out", type=Path)
    p.add_argument("--score-thresh", type=_unit, default=0.7)
    p.add_argument("--iou-thresh", type=_unit, default=0.3)
    p.add_argument("--save-weights", type=Path, help="path prefix for .bin/.manifest")

    p = add("overlay", cmd_overlay, "draw detections onto an image")
    p.add_argument("image", type=Path)
    p.add_argument("detections", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--image-id")

    p = add("compose-bands", cmd_compose_bands, "stack three of G/R/RE/NIR into one image")
    for band in ("g", "r", "re", "nir"):
        p.add_argument(f"--{band}", type=Path, required=True)
    p.add_argument("--bands", default="R-G-NIR")
    p.add_argument("--out", type=Path, required=True)
    return parser, subs


def read_config(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(subparser: argparse.ArgumentParser, config: dict[str, str]) -> None:
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in config.items():
        action = actions.get(key)
        if action is None or key == "help":
            raise ConfigError(f"unknown config key {key!r}")
        if action.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs in ("+", "*"):
            defaults[key] = [action.type(v) if action.type else v for v in raw.split()]
        else:
            defaults[key] = action.type(raw) if action.type else raw
        action.required = False
    subparser.set_defaults(**defaults)


def main(argv=None) -> int:
    parser, subs = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if args.config:
            _apply_config(subs[args.command], read_config(args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except CropDetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (argparse.ArgumentTypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
