"""Array containers and the on-disk formats used between pipeline stages.

Three formats are supported:

* ``LMT1`` tensors: ``b"LMT1"``, ``u8`` ndim, ``ndim x u32`` dims, then the
  float32 payload in row-major order. Everything little-endian.
* Binary PGM (``P5``, maxval 255) label maps. Pixel value = class index and
  255 marks an unlabeled pixel.
* Binary PPM (``P6``) for RGB images and colour overlays.
"""

import re
import struct
from dataclasses import dataclass

import numpy as np

from . import UNLABELED
from .errors import (
    BadHeader,
    BadMagic,
    IndexOutOfRange,
    IoFailure,
    NonFiniteValue,
    PaletteSizeMismatch,
    ShapeMismatch,
    TruncatedPayload,
)

TENSOR_MAGIC = b"LMT1"
PGM_SENTINEL = 255
OVERLAY_GRAY = (128, 128, 128)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class indices. ``UNLABELED`` (-1) marks noisy/unknown pixels."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ShapeMismatch(f"label map must be 2-D, got shape {labels.shape}")
        if not 1 <= self.num_classes <= PGM_SENTINEL:
            raise IndexOutOfRange(f"num_classes {self.num_classes} outside [1, 255]")
        labels = labels.astype(np.int16)
        bad = (labels != UNLABELED) & ((labels < 0) | (labels >= self.num_classes))
        if bad.any():
            v = int(labels[bad][0])
            raise IndexOutOfRange(f"label {v} not in [0, {self.num_classes})")
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def shape(self):
        return self.labels.shape

    @property
    def labeled(self):
        return self.labels != UNLABELED


# ---------------------------------------------------------------- LMT1 tensors


def tensor_nbytes(dims):
    """Exact file size of an LMT1 tensor with the given dims."""
    return 4 + 1 + 4 * len(dims) + 4 * int(np.prod(dims, dtype=np.int64))


def encode_tensor(t):
    t = np.asarray(t)
    if not 1 <= t.ndim <= 4:
        raise ShapeMismatch(f"LMT1 tensors have 1-4 dims, got {t.ndim}")
    data = np.ascontiguousarray(t, dtype="<f4")
    if not np.isfinite(data).all():
        raise NonFiniteValue("refusing to write non-finite values")
    header = TENSOR_MAGIC + struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
    return header + data.tobytes()


def decode_tensor(buf):
    if len(buf) < 5:
        raise BadMagic("file shorter than LMT1 header", offset=len(buf))
    if buf[:4] != TENSOR_MAGIC:
        raise BadMagic(f"expected magic {TENSOR_MAGIC!r}, found {bytes(buf[:4])!r}", offset=0)
    ndim = buf[4]
    if not 1 <= ndim <= 4:
        raise BadMagic(f"ndim {ndim} outside [1, 4]", offset=4)
    end = 5 + 4 * ndim
    if len(buf) < end:
        raise TruncatedPayload("dims truncated", offset=len(buf))
    dims = struct.unpack(f"<{ndim}I", buf[5:end])
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) < end + 4 * count:
        raise TruncatedPayload(
            f"payload needs {4 * count} bytes, {len(buf) - end} present", offset=len(buf)
        )
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=end)
    finite = np.isfinite(data)
    if not finite.all():
        k = int(np.argmin(finite))
        raise NonFiniteValue(f"non-finite value at element {k}", offset=end + 4 * k)
    return _frozen(data.astype(np.float32).reshape(dims))


def read_tensor(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_tensor(buf)


def write_tensor(t, path):
    payload = encode_tensor(t)
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------- netpbm

_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")
_NUM_CLASSES_COMMENT = re.compile(rb"#\s*labelmend num_classes (\d+)")


def _parse_netpbm_header(buf, magic):
    """Return (width, height, maxval, payload offset, header comments)."""
    if buf[:2] != magic:
        raise BadHeader(f"expected {magic!r}, found {bytes(buf[:2])!r}", offset=0)
    pos = 2
    values = []
    for _ in range(3):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise BadHeader("header ends early", offset=pos)
        try:
            values.append(int(m.group(2)))
        except ValueError:
            raise BadHeader(f"bad header token {m.group(2)!r}", offset=m.start(2)) from None
        pos = m.end()
    if pos >= len(buf) or buf[pos : pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise BadHeader("missing whitespace after maxval", offset=pos)
    width, height, maxval = values
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise BadHeader(f"bad dimensions {width}x{height} maxval {maxval}", offset=2)
    return width, height, maxval, pos + 1, buf[2:pos]


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, payload):
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def decode_label_map(buf, num_classes=None):
    width, height, maxval, start, header = _parse_netpbm_header(buf, b"P5")
    if maxval != 255:
        raise BadHeader(f"label maps need maxval 255, got {maxval}", offset=start - 1)
    if len(buf) < start + width * height:
        raise TruncatedPayload("PGM raster truncated", offset=len(buf))
    raw = np.frombuffer(buf, dtype=np.uint8, count=width * height, offset=start)
    raw = raw.reshape(height, width).astype(np.int16)
    if num_classes is None:
        m = _NUM_CLASSES_COMMENT.search(header)
        if m:
            num_classes = int(m.group(1))
        else:
            present = raw[raw != PGM_SENTINEL]
            num_classes = int(present.max()) + 1 if present.size else 1
    bad = (raw != PGM_SENTINEL) & (raw >= num_classes)
    if bad.any():
        k = int(np.flatnonzero(bad.ravel())[0])
        raise IndexOutOfRange(
            f"value {int(raw.ravel()[k])} at pixel {k} not below num_classes={num_classes}"
        )
    raw[raw == PGM_SENTINEL] = UNLABELED
    return LabelMap(raw, num_classes)


def encode_label_map(labels):
    h, w = labels.shape
    raster = np.where(labels.labels == UNLABELED, PGM_SENTINEL, labels.labels).astype(np.uint8)
    header = f"P5\n# labelmend num_classes {labels.num_classes}\n{w} {h}\n255\n".encode()
    return header + raster.tobytes()


def read_label_map(path, num_classes=None):
    """Read a P5 label map. ``num_classes`` defaults to the value recorded in
    the header comment, else max label + 1."""
    return decode_label_map(_read_bytes(path), num_classes)


def write_label_map(labels, path):
    _write_bytes(path, encode_label_map(labels))


def decode_ppm(buf):
    width, height, maxval, start, _ = _parse_netpbm_header(buf, b"P6")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * 3
    if len(buf) < start + count * dtype.itemsize:
        raise TruncatedPayload("PPM raster truncated", offset=len(buf))
    raw = np.frombuffer(buf, dtype=dtype, count=count, offset=start)
    img = raw.reshape(height, width, 3).astype(np.float64) / maxval
    return _frozen(np.clip(img, 0.0, 1.0))


def encode_ppm(rgb8):
    rgb8 = np.asarray(rgb8, dtype=np.uint8)
    h, w, _ = rgb8.shape
    return f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(rgb8).tobytes()


def read_image(path):
    """Read a P6 image as float64 ``[H, W, 3]`` with values in [0, 1]."""
    return decode_ppm(_read_bytes(path))


def write_image(image, path):
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    _write_bytes(path, encode_ppm(np.round(img * 255.0).astype(np.uint8)))


def default_palette(n):
    """PASCAL-VOC style colour map: class 0 black, then bit-interleaved colours."""
    pal = np.zeros((n, 3), dtype=np.uint8)
    for c in range(n):
        r = g = b = 0
        cid = c
        for j in range(8):
            r |= ((cid >> 0) & 1) << (7 - j)
            g |= ((cid >> 1) & 1) << (7 - j)
            b |= ((cid >> 2) & 1) << (7 - j)
            cid >>= 3
        pal[c] = (r, g, b)
    return pal


def colorize(labels, palette=None):
    palette = default_palette(labels.num_classes) if palette is None else np.asarray(palette)
    if palette.shape != (labels.num_classes, 3):
        raise PaletteSizeMismatch(
            f"palette has {len(palette)} entries, label map has {labels.num_classes} classes"
        )
    lut = np.vstack([palette.astype(np.uint8), np.array([OVERLAY_GRAY], dtype=np.uint8)])
    idx = np.where(labels.labels == UNLABELED, labels.num_classes, labels.labels)
    return lut[idx]


def write_color_overlay(labels, palette=None):
    """Render a label map as binary PPM bytes; unlabeled pixels are mid-gray."""
    return encode_ppm(colorize(labels, palette))
