"""Focal classification loss and smooth-L1 box regression with closed-form gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ConfigError, ShapeError
from .geometry import AnchorAssignment, encode_boxes


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.25
    gamma: float = 2.0
    beta: float = 1.0
    box_weight: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if self.box_weight < 0:
            raise ConfigError(f"box_weight must be >= 0, got {self.box_weight}")


@dataclass
class LossValueAndGrad:
    value: float
    gradient: Any


def _softplus(x):
    # log(1 + exp(x)) without overflow
    return np.logaddexp(0.0, x)


def focal_terms(logits, targets, alpha: float = 0.25, gamma: float = 2.0):
    """Elementwise focal loss and its derivative w.r.t. the logits.

    ``-ln(p_t)`` is evaluated as ``softplus(-z_t)`` straight from the signed
    logit ``z_t``, so saturated probabilities never appear.
    """
    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets)
    sign = np.where(t == 1, 1.0, -1.0)
    z = sign * x
    alpha_t = np.where(t == 1, alpha, 1.0 - alpha)
    nll = _softplus(-z)                  # -ln p_t
    q = np.exp(-_softplus(z))            # 1 - p_t
    p = np.exp(-nll)                     # p_t
    mod = q ** gamma
    value = alpha_t * mod * nll
    grad = -sign * alpha_t * mod * (gamma * p * nll + q)
    return value, grad


def focal_loss(logit: float, target: int, cfg: LossConfig = LossConfig()) -> LossValueAndGrad:
    if target not in (0, 1):
        raise ValueError(f"target must be 0 or 1, got {target}")
    v, g = focal_terms(logit, target, cfg.alpha, cfg.gamma)
    return LossValueAndGrad(float(v), float(g))


def smooth_l1_terms(x, beta: float = 1.0):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    quad = ax < beta
    value = np.where(quad, 0.5 * x * x / beta, ax - 0.5 * beta)
    grad = np.where(quad, x / beta, np.sign(x))
    return value, grad


def smooth_l1(x: float, beta: float = 1.0) -> LossValueAndGrad:
    if beta <= 0:
        raise ConfigError(f"beta must be > 0, got {beta}")
    v, g = smooth_l1_terms(x, beta)
    return LossValueAndGrad(float(v), float(g))


def detection_targets(anchors, gt_boxes, gt_classes, assignment: AnchorAssignment, num_classes: int = 2):
    """One-hot class targets ``(N, K)`` and encoded box targets ``(N, 4)``.

    Rows of non-positive anchors are zero in both outputs.
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    n = len(anchors)
    cls_t = np.zeros((n, num_classes), dtype=np.int8)
    box_t = np.zeros((n, 4))
    pos = np.flatnonzero(assignment.positive)
    if pos.size:
        m = assignment.matched[pos]
        cls_t[pos, np.asarray(gt_classes)[m]] = 1
        box_t[pos] = encode_boxes(anchors[pos], np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)[m])
    return cls_t, box_t


def detection_loss(logits, deltas, assignment: AnchorAssignment, cls_targets, box_targets,
                   cfg: LossConfig = LossConfig()) -> LossValueAndGrad:
    """Total loss ``cls + box_weight * reg``, both normalised by max(1, #positives).

    Returns the gradient as ``(d_logits, d_deltas)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    cls_targets = np.asarray(cls_targets)
    box_targets = np.asarray(box_targets, dtype=np.float64)
    labels = np.asarray(assignment.labels)
    n = len(labels)
    if logits.ndim != 2 or logits.shape[0] != n or cls_targets.shape != logits.shape:
        raise ShapeError(f"logits {logits.shape} / class targets {cls_targets.shape} vs {n} anchors")
    if deltas.shape != (n, 4) or box_targets.shape != (n, 4):
        raise ShapeError(f"deltas {deltas.shape} / box targets {box_targets.shape} vs {n} anchors")

    pos = labels == AnchorAssignment.POSITIVE
    active = (labels != AnchorAssignment.IGNORE)[:, None]
    norm = max(1, int(np.count_nonzero(pos)))

    fv, fg = focal_terms(logits, cls_targets, cfg.alpha, cfg.gamma)
    cls_value = float(np.sum(fv, where=active)) / norm
    d_logits = np.where(active, fg, 0.0) / norm

    sv, sg = smooth_l1_terms(deltas - box_targets, cfg.beta)
    reg_value = float(np.sum(sv[pos])) / norm
    d_deltas = np.zeros_like(deltas)
    d_deltas[pos] = cfg.box_weight * sg[pos] / norm

    return LossValueAndGrad(cls_value + cfg.box_weight * reg_value, (d_logits, d_deltas))
