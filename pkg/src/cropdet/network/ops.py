"""Dense tensor primitives on ``(H, W, C)`` numpy arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


@dataclass(frozen=True, eq=False)
class ConvSpec:
    """Convolution parameters.

    ``weights`` has shape ``(k, k, in_channels, out_channels)``, ``bias`` has
    shape ``(out_channels,)``. Padding is "half": output spatial size is
    ``ceil(input / stride)`` with any odd padding going to the bottom/right.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1

    def __post_init__(self):
        w = self.weights
        if w.ndim != 4 or w.shape[0] != w.shape[1] or w.shape[0] not in (1, 3):
            raise ShapeError(f"conv kernel must be (k, k, cin, cout) with k in {{1, 3}}, got {w.shape}")
        if self.bias.shape != (w.shape[3],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {w.shape[3]} output channels")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[3]

    def scaled(self, factor: float) -> "ConvSpec":
        return ConvSpec(self.weights * factor, self.bias * factor, self.stride)


def check_tensor(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if x.ndim != 3 or min(x.shape) < 1:
        raise ShapeError(f"{name}: expected a nonempty (H, W, C) tensor, got shape {x.shape}")
    return x


def half_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv2d(x: np.ndarray, spec: ConvSpec, name: str = "conv") -> np.ndarray:
    """Zero-padded cross-correlation; output dtype follows the input."""
    check_tensor(x, name)
    if x.shape[2] != spec.in_channels:
        raise ShapeError(f"{name}: input has {x.shape[2]} channels, conv expects {spec.in_channels}")
    k, s = spec.kernel_size, spec.stride
    h, w, _ = x.shape
    w_kernel = spec.weights.astype(x.dtype, copy=False)
    if k == 1:
        out = x[::s, ::s] @ w_kernel[0, 0]
    else:
        pt, pb = half_padding(h, k, s)
        pl, pr = half_padding(w, k, s)
        xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)))
        # windows: (oh, ow, C, k, k)
        win = sliding_window_view(xp, (k, k), axis=(0, 1))[::s, ::s]
        out = np.tensordot(win, w_kernel, axes=([3, 4, 2], [0, 1, 2]))
    return out + spec.bias.astype(x.dtype, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def upsample_nearest_2x(x: np.ndarray) -> np.ndarray:
    check_tensor(x, "upsample input")
    return x.repeat(2, axis=0).repeat(2, axis=1)


def add_elementwise(a: np.ndarray, b: np.ndarray, name: str = "add") -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: cannot add tensors of shape {a.shape} and {b.shape}")
    return a + b
