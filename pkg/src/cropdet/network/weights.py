"""Flat weight blob + text manifest.

The blob is the concatenation of every array as little-endian float32.
The manifest has one line per array::

    <name> <d0>x<d1>x...  <byte offset>

Conv parameters are stored as ``<layer>.weight`` (k, k, cin, cout) and
``<layer>.bias`` (cout,); the stride goes in a trailing ``stride=<s>`` field.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import AnnotationParseError, ImageIOError
from .ops import ConvSpec

_LE_F32 = np.dtype("<f4")


def save_weights(params: dict[str, ConvSpec], blob_path, manifest_path) -> None:
    lines = []
    offset = 0
    with open(blob_path, "wb") as blob:
        for name in sorted(params):
            spec = params[name]
            for suffix, arr in (("weight", spec.weights), ("bias", spec.bias)):
                data = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
                dims = "x".join(str(d) for d in arr.shape)
                lines.append(f"{name}.{suffix} {dims} {offset} stride={spec.stride}")
                blob.write(data)
                offset += len(data)
    Path(manifest_path).write_text("\n".join(lines) + "\n")


def load_weights(blob_path, manifest_path) -> dict[str, ConvSpec]:
    raw = Path(blob_path).read_bytes()
    arrays, strides = {}, {}
    for lineno, line in enumerate(Path(manifest_path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, dims, offset, stride = line.split()
            shape = tuple(int(d) for d in dims.split("x"))
            offset = int(offset)
            stride = int(stride.removeprefix("stride="))
        except ValueError as exc:
            raise AnnotationParseError(f"bad manifest entry {line!r}", manifest_path, line=lineno) from exc
        count = int(np.prod(shape))
        end = offset + 4 * count
        if offset < 0 or end > len(raw):
            raise ImageIOError(f"{manifest_path}:{lineno}: {name} exceeds blob of {len(raw)} bytes")
        arrays[name] = np.frombuffer(raw, dtype=_LE_F32, count=count, offset=offset).reshape(shape).astype(np.float32)
        strides[name.rsplit(".", 1)[0]] = stride
    params = {}
    for layer, stride in strides.items():
        try:
            params[layer] = ConvSpec(arrays[layer + ".weight"], arrays[layer + ".bias"], stride)
        except KeyError as exc:
            raise AnnotationParseError(f"layer {layer} lacks {exc.args[0]}", manifest_path) from exc
    return params
