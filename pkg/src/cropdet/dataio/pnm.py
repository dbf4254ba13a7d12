"""Binary portable graymap / pixmap (P5, P6) and PAM (P7) images.

Samples are scaled to [0, 1] by the header's max value. Max values up to
255 use one byte per sample, larger ones (up to 65535) two bytes, big-endian
as the format requires. Writing quantises with ``round(v * maxval)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ImageIOError, InvalidInputError

_MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}
_TOKEN = re.compile(rb"(?:\s+|#[^\n]*\n)*(\S+)")


@dataclass
class ImageBuffer:
    data: np.ndarray  # (H, W, C) float64 in [0, 1]
    maxval: int = 255

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[2] not in (1, 3, 4) or min(d.shape) < 1:
            raise InvalidInputError(f"image must be (H, W, 1|3|4), got shape {d.shape}")
        if not np.all((d >= 0) & (d <= 1)):
            raise InvalidInputError("image values must lie in [0, 1]")
        if not 1 <= self.maxval <= 65535:
            raise InvalidInputError(f"maxval {self.maxval} outside 1..65535")
        self.data = d

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def bit_depth(self) -> int:
        return 8 if self.maxval <= 255 else 16

    def channel(self, i: int) -> "ImageBuffer":
        return ImageBuffer(self.data[:, :, i:i + 1].copy(), self.maxval)


def _header_int(tok: bytes, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ImageIOError(f"bad {what} field {tok!r} in header") from None


def decode_pnm(raw: bytes) -> ImageBuffer:
    magic = raw[:2]
    if magic == b"P7":
        return _decode_pam(raw)
    if magic not in _MAGIC_CHANNELS:
        raise ImageIOError(f"unsupported magic number {magic!r}; expected P5, P6 or P7")
    pos = 2
    fields = []
    for what in ("width", "height", "maxval"):
        m = _TOKEN.match(raw, pos)
        if not m:
            raise ImageIOError(f"truncated header: missing {what}")
        fields.append(_header_int(m.group(1), what))
        pos = m.end()
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise ImageIOError("header not terminated by whitespace")
    width, height, maxval = fields
    return _decode_payload(raw[pos + 1:], width, height, _MAGIC_CHANNELS[magic], maxval)


def _decode_pam(raw: bytes) -> ImageBuffer:
    end = raw.find(b"ENDHDR\n")
    if end < 0:
        raise ImageIOError("PAM header lacks ENDHDR")
    header = {}
    for line in raw[3:end].decode("ascii", "replace").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, val = line.partition(" ")
            header[key] = val.strip()
    try:
        width, height = int(header["WIDTH"]), int(header["HEIGHT"])
        depth, maxval = int(header["DEPTH"]), int(header["MAXVAL"])
    except (KeyError, ValueError) as exc:
        raise ImageIOError(f"bad PAM header: {exc}") from None
    return _decode_payload(raw[end + 7:], width, height, depth, maxval)


def _decode_payload(payload: bytes, width, height, channels, maxval) -> ImageBuffer:
    if width < 1 or height < 1 or not 1 <= maxval <= 65535 or channels not in (1, 3, 4):
        raise ImageIOError(f"invalid geometry {width}x{height}x{channels} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * channels * dtype.itemsize
    if len(payload) < need:
        raise ImageIOError(f"truncated payload: {len(payload)} of {need} bytes")
    arr = np.frombuffer(payload, dtype=dtype, count=width * height * channels).reshape(height, width, channels)
    if arr.max(initial=0) > maxval:
        raise ImageIOError(f"sample exceeds maxval {maxval}")
    return ImageBuffer(arr.astype(np.float64) / maxval, maxval)


def encode_pnm(img: ImageBuffer, maxval=None) -> bytes:
    maxval = img.maxval if maxval is None else maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    q = np.rint(img.data * maxval).astype(dtype)
    h, w, c = img.data.shape
    if c == 4:
        header = (f"P7\nWIDTH {w}\nHEIGHT {h}\nDEPTH 4\nMAXVAL {maxval}\n"
                  f"TUPLTYPE RGB_ALPHA\nENDHDR\n").encode("ascii")
    else:
        header = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n{maxval}\n".encode("ascii")
    return header + q.tobytes()


def read_image(path) -> ImageBuffer:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror}") from exc
    try:
        return decode_pnm(raw)
    except ImageIOError as exc:
        raise ImageIOError(f"{path}: {exc}") from None


def write_image(img: ImageBuffer, path, maxval=None) -> None:
    try:
        Path(path).write_bytes(encode_pnm(img, maxval))
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror}") from exc
