"""Forward graph: strided backbone stub, P2-P6 feature pyramid, shared heads.

Pyramid topology::

    P6 = conv3x3/2(C5)
    P5 = conv3x3(up(P6) + lateral1x1(C5))
    P4 = conv3x3(up(P5) + lateral1x1(C4))
    P3 = conv3x3(up(P4) + lateral1x1(C3))
    P2 = conv3x3(up(P3) + lateral1x1(C2))

Every conv is followed by ReLU except the two head output convs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import geometry
from ..errors import InvalidInputError, ShapeError
from ..geometry import AnchorConfig, Box, LabeledBox
from .ops import ConvSpec, add_elementwise, check_tensor, conv2d, relu, upsample_nearest_2x

PYRAMID_CHANNELS = 256
DEFAULT_CHANNEL_PLAN = (64, 128, 256, 512)
STEM_CHANNELS = 32
BACKBONE_LEVELS = ("C2", "C3", "C4", "C5")
PYRAMID_LEVELS = ("P2", "P3", "P4", "P5", "P6")
PRIOR_PROBABILITY = 0.01


@dataclass
class BackboneFeatures:
    C2: np.ndarray
    C3: np.ndarray
    C4: np.ndarray
    C5: np.ndarray

    def levels(self) -> list[np.ndarray]:
        return [self.C2, self.C3, self.C4, self.C5]


@dataclass
class PyramidFeatures:
    P2: np.ndarray
    P3: np.ndarray
    P4: np.ndarray
    P5: np.ndarray
    P6: np.ndarray

    def levels(self) -> list[np.ndarray]:
        return [self.P2, self.P3, self.P4, self.P5, self.P6]


@dataclass
class RawDetections:
    """Head outputs flattened P2 -> P6, row-major, anchor-index order."""

    logits: np.ndarray  # (N, K)
    deltas: np.ndarray  # (N, 4)
    level_shapes: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.logits)


def _rng(seed: int, part: str) -> np.random.Generator:
    return np.random.default_rng([seed, sum(ord(c) << (8 * i) for i, c in enumerate(part))])


def _he_conv(rng, k, cin, cout, stride=1, std=None, bias=0.0, dtype=np.float32) -> ConvSpec:
    if std is None:
        std = np.sqrt(2.0 / (k * k * cin))
    w = rng.normal(0.0, std, size=(k, k, cin, cout)).astype(dtype)
    return ConvSpec(w, np.full(cout, bias, dtype=dtype), stride)


def init_backbone(seed: int = 0, in_channels: int = 3, channel_plan=DEFAULT_CHANNEL_PLAN,
                  dtype=np.float32) -> dict[str, ConvSpec]:
    if len(channel_plan) != 4:
        raise ShapeError(f"channel plan needs four entries (C2..C5), got {channel_plan}")
    rng = _rng(seed, "backbone")
    params = {"backbone.stem": _he_conv(rng, 3, in_channels, STEM_CHANNELS, stride=2, dtype=dtype)}
    cin = STEM_CHANNELS
    for name, cout in zip(BACKBONE_LEVELS, channel_plan):
        params[f"backbone.{name.lower()}"] = _he_conv(rng, 3, cin, cout, stride=2, dtype=dtype)
        cin = cout
    return params


def init_pyramid(seed: int = 0, channel_plan=DEFAULT_CHANNEL_PLAN, dtype=np.float32) -> dict[str, ConvSpec]:
    rng = _rng(seed, "pyramid")
    params = {"pyramid.p6": _he_conv(rng, 3, channel_plan[3], PYRAMID_CHANNELS, stride=2, dtype=dtype)}
    for name, cin in zip(reversed(BACKBONE_LEVELS), reversed(channel_plan)):
        level = "p" + name[1]
        params[f"pyramid.lateral_{name.lower()}"] = _he_conv(rng, 1, cin, PYRAMID_CHANNELS, dtype=dtype)
        params[f"pyramid.merge_{level}"] = _he_conv(rng, 3, PYRAMID_CHANNELS, PYRAMID_CHANNELS, dtype=dtype)
    return params


def init_heads(seed: int = 0, num_anchors: int = 3, num_classes: int = 2, depth: int = 4,
               dtype=np.float32) -> dict[str, ConvSpec]:
    rng = _rng(seed, "heads")
    params = {}
    for head, width in (("cls_head", num_anchors * num_classes), ("box_head", num_anchors * 4)):
        for i in range(depth):
            params[f"{head}.{i}"] = _he_conv(rng, 3, PYRAMID_CHANNELS, PYRAMID_CHANNELS, dtype=dtype)
        bias = -np.log((1 - PRIOR_PROBABILITY) / PRIOR_PROBABILITY) if head == "cls_head" else 0.0
        params[f"{head}.out"] = _he_conv(rng, 3, PYRAMID_CHANNELS, width, std=0.01, bias=bias, dtype=dtype)
    return params


def _record(trace, name, x):
    if trace is not None:
        trace.append((name, tuple(x.shape)))
    return x


def backbone_stub(image: np.ndarray, params: Optional[dict] = None, *, seed: int = 0,
                  channel_plan=DEFAULT_CHANNEL_PLAN, trace=None) -> BackboneFeatures:
    """Four stride-2 stages after a stride-2 stem; C2..C5 at strides 4..32."""
    check_tensor(image, "image")
    h, w, c = image.shape
    if h % geometry.SIZE_MULTIPLE or w % geometry.SIZE_MULTIPLE:
        raise InvalidInputError(f"image size {h}x{w} is not a multiple of {geometry.SIZE_MULTIPLE}")
    if params is None:
        params = init_backbone(seed, c, channel_plan)
    x = relu(conv2d(image.astype(params["backbone.stem"].weights.dtype, copy=False),
                    params["backbone.stem"], "backbone.stem"))
    _record(trace, "backbone.stem", x)
    feats = []
    for name in BACKBONE_LEVELS:
        key = f"backbone.{name.lower()}"
        x = relu(conv2d(x, params[key], key))
        feats.append(_record(trace, name, x))
    return BackboneFeatures(*feats)


def _merge(top: np.ndarray, lateral: np.ndarray, name: str) -> np.ndarray:
    up = upsample_nearest_2x(top)
    lh, lw = lateral.shape[:2]
    # ceil-padded levels overshoot an odd lateral map by one row/column
    if (top.shape[0], top.shape[1]) == (-(-lh // 2), -(-lw // 2)):
        up = up[:lh, :lw]
    return add_elementwise(up, lateral, name)


def build_pyramid(features: BackboneFeatures, params: Optional[dict] = None, *, seed: int = 0,
                  trace=None) -> PyramidFeatures:
    levels = features.levels()
    for finer, coarser in zip(levels, levels[1:]):
        if coarser.shape[:2] != (-(-finer.shape[0] // 2), -(-finer.shape[1] // 2)):
            raise ShapeError(f"backbone strides inconsistent: {finer.shape} then {coarser.shape}")
    if params is None:
        params = init_pyramid(seed, tuple(f.shape[2] for f in levels), levels[0].dtype)

    p6 = relu(conv2d(features.C5, params["pyramid.p6"], "pyramid.p6"))
    _record(trace, "P6", p6)
    outputs = {"P6": p6}
    top = p6
    for cname in reversed(BACKBONE_LEVELS):
        pname = "P" + cname[1]
        lat_key = f"pyramid.lateral_{cname.lower()}"
        lateral = relu(conv2d(getattr(features, cname), params[lat_key], lat_key))
        _record(trace, lat_key, lateral)
        merged = _merge(top, lateral, f"{pname} merge of upsample(P{int(cname[1]) + 1}) and {lat_key}")
        _record(trace, f"{pname}.merge", merged)
        merge_key = f"pyramid.merge_{pname.lower()}"
        top = relu(conv2d(merged, params[merge_key], merge_key))
        outputs[pname] = _record(trace, pname, top)
    return PyramidFeatures(**{k: outputs[k] for k in PYRAMID_LEVELS})


def _head_depth(params: dict, head: str) -> int:
    return sum(1 for k in params if k.startswith(head + ".") and k != head + ".out")


def run_heads(pyramid: PyramidFeatures, params: Optional[dict] = None, *, num_anchors: int = 3,
              num_classes: int = 2, depth: int = 4, seed: int = 0, trace=None) -> RawDetections:
    """Classification and box subnets shared across all pyramid levels."""
    levels = pyramid.levels()
    for name, p in zip(PYRAMID_LEVELS, levels):
        check_tensor(p, name)
        if p.shape[2] != PYRAMID_CHANNELS:
            raise ShapeError(f"{name} has {p.shape[2]} channels, heads expect {PYRAMID_CHANNELS}")
    if params is None:
        params = init_heads(seed, num_anchors, num_classes, depth, levels[0].dtype)
    num_anchors = params["box_head.out"].out_channels // 4
    num_classes = params["cls_head.out"].out_channels // num_anchors

    logits, deltas, shapes = [], [], []
    for name, p in zip(PYRAMID_LEVELS, levels):
        outs = {}
        for head in ("cls_head", "box_head"):
            x = p
            for i in range(_head_depth(params, head)):
                x = relu(conv2d(x, params[f"{head}.{i}"], f"{head}.{i}"))
            outs[head] = _record(trace, f"{name}.{head}", conv2d(x, params[f"{head}.out"], f"{head}.out"))
        h, w = p.shape[:2]
        shapes.append((h, w))
        logits.append(outs["cls_head"].reshape(h * w * num_anchors, num_classes))
        deltas.append(outs["box_head"].reshape(h * w * num_anchors, 4))
    return RawDetections(np.concatenate(logits), np.concatenate(deltas), shapes)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def postprocess_raw(raw: RawDetections, anchors: np.ndarray, image_bounds, score_thresh: float = 0.7,
                    iou_thresh: float = 0.3, per_class: bool = True) -> list[LabeledBox]:
    """Scores above ``score_thresh`` -> decoded, clipped boxes -> NMS."""
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    if len(anchors) != len(raw):
        raise ShapeError(f"{len(raw)} raw detections for {len(anchors)} anchors")
    scores = sigmoid(raw.logits)
    idx, cls = np.nonzero(scores > score_thresh)
    if idx.size == 0:
        return []
    boxes = geometry.decode_boxes(anchors[idx], raw.deltas[idx].astype(np.float64), image_bounds)
    ok = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    boxes, idx, cls = boxes[ok], idx[ok], cls[ok]
    s = scores[idx, cls]
    keep = geometry.nms_indices(boxes, s, cls if per_class else None, iou_thresh)
    return [LabeledBox(Box(*boxes[k].tolist()), int(cls[k]), float(s[k])) for k in keep]


class RetinaUNetAg:
    """Seeded, immutable parameter set plus the forward pass."""

    def __init__(self, seed: int = 0, in_channels: int = 3, channel_plan=DEFAULT_CHANNEL_PLAN,
                 num_anchors: int = 3, num_classes: int = 2, head_depth: int = 4, dtype=np.float32,
                 params: Optional[dict] = None):
        self.seed = seed
        if params is None:
            params = {}
            params.update(init_backbone(seed, in_channels, channel_plan, dtype))
            params.update(init_pyramid(seed, channel_plan, dtype))
            params.update(init_heads(seed, num_anchors, num_classes, head_depth, dtype))
        self.params = params

    @property
    def num_anchors(self) -> int:
        return self.params["box_head.out"].out_channels // 4

    @property
    def num_classes(self) -> int:
        return self.params["cls_head.out"].out_channels // self.num_anchors

    def backbone(self, image, trace=None) -> BackboneFeatures:
        return backbone_stub(image, self.params, trace=trace)

    def pyramid(self, features, trace=None) -> PyramidFeatures:
        return build_pyramid(features, self.params, trace=trace)

    def heads(self, pyramid, trace=None) -> RawDetections:
        return run_heads(pyramid, self.params, trace=trace)

    def raw(self, image, trace=None) -> RawDetections:
        return self.heads(self.pyramid(self.backbone(image, trace), trace), trace)

    def detect(self, image, anchor_cfg: Optional[AnchorConfig] = None, score_thresh: float = 0.7,
               iou_thresh: float = 0.3, per_class: bool = True) -> list[LabeledBox]:
        h, w = image.shape[:2]
        if anchor_cfg is None:
            anchor_cfg = AnchorConfig(input_size=(h, w))
        if tuple(anchor_cfg.input_size) != (h, w):
            raise ShapeError(f"image is {h}x{w} but anchors were configured for {anchor_cfg.input_size}")
        if anchor_cfg.num_anchors_per_cell != self.num_anchors:
            raise ShapeError(f"{anchor_cfg.num_anchors_per_cell} anchors per cell vs {self.num_anchors} in heads")
        anchors = np.concatenate(geometry.generate_anchors(anchor_cfg))
        return postprocess_raw(self.raw(image), anchors, (h, w), score_thresh, iou_thresh, per_class)


def forward_detect(image: np.ndarray, model: Optional[RetinaUNetAg] = None,
                   anchor_cfg: Optional[AnchorConfig] = None, score_thresh: float = 0.7,
                   iou_thresh: float = 0.3, seed: int = 0) -> list[LabeledBox]:
    if model is None:
        model = RetinaUNetAg(seed=seed, in_channels=image.shape[2])
    return model.detect(image, anchor_cfg, score_thresh, iou_thresh)
