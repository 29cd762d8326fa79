"""PTFD: the bit-exact patch-token feature dump interchange format.

A PTFD file decouples the engine from whatever backbone produced the
features. Layout (all integers little-endian):

    bytes 0..3    magic ``b"PTFD"``
    bytes 4..7    version, u32, currently 1
    bytes 8..35   B, h, w, D, C, H, W as seven u32
    byte  36      flags: bit 0 set when ground-truth masks follow;
                  bits 1..7 reserved, must be zero
    bytes 37..39  u24 header checksum: plain byte sum of bytes 0..36
    ---
    B labels, u32 each, values in [0, C)
    B id records: u16 byte length + UTF-8 bytes
    tokens as float32 in [B, h, w, D] row-major order
    if flag bit 0: per image, the H*W mask bits packed row-major
    MSB-first and padded to a byte boundary

The checksum makes every single-byte corruption of the 40-byte header
detectable (the sum of at most 37 bytes cannot wrap a 24-bit field), which
matters because C, H and W do not otherwise influence the payload size.

Reads are reentrant. Concurrent writes to the same path are undefined
behaviour and not guarded against.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import FeatureBatch
from .errors import (
    BadMagic,
    CorruptHeader,
    DimMismatch,
    IoError,
    TruncatedFile,
    UnsupportedVersion,
)

MAGIC = b"PTFD"
VERSION = 1
HEADER_SIZE = 40
_FLAG_MASKS = 1


@dataclass(frozen=True)
class PtfdHeader:
    """Parsed header of a PTFD file."""

    version: int
    b: int
    h: int
    w: int
    d: int
    c: int
    img_h: int
    img_w: int
    has_masks: bool


def _checksum(header36: bytes) -> int:
    # Byte sum of magic..flags; 37 * 255 < 2**24, so any one-byte change
    # shifts the stored value.
    return sum(header36)


def _encode_header(batch: FeatureBatch) -> bytes:
    b, h, w, d = batch.shape
    img_h, img_w = batch.image_size
    flags = _FLAG_MASKS if batch.gt_masks is not None else 0
    head = MAGIC + struct.pack(
        "<8I", VERSION, b, h, w, d, batch.num_classes, img_h, img_w
    ) + bytes([flags])
    return head + _checksum(head).to_bytes(3, "little")


def _decode_header(raw: bytes) -> PtfdHeader:
    if len(raw) < HEADER_SIZE:
        raise TruncatedFile(f"file too short for header: {len(raw)} bytes")
    if raw[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {raw[:4]!r}")
    stored = int.from_bytes(raw[37:40], "little")
    if stored != _checksum(raw[:37]):
        raise CorruptHeader("header checksum mismatch")
    version, b, h, w, d, c, img_h, img_w = struct.unpack("<8I", raw[4:36])
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version {version}")
    flags = raw[36]
    if flags & ~_FLAG_MASKS:
        raise UnsupportedVersion(f"unknown flag bits 0x{flags:02x}")
    for name, dim in (("B", b), ("h", h), ("w", w), ("D", d), ("C", c), ("H", img_h), ("W", img_w)):
        if dim < 1:
            raise DimMismatch(f"header dimension {name} must be >= 1, got {dim}")
    return PtfdHeader(version, b, h, w, d, c, img_h, img_w, bool(flags & _FLAG_MASKS))


def write_ptfd(batch: FeatureBatch, path) -> None:
    """Serialize a batch to ``path`` in the layout documented above."""
    parts = [_encode_header(batch)]
    parts.append(batch.labels.astype("<u4").tobytes())
    for image_id in batch.ids:
        encoded = image_id.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise IoError(f"image id too long to encode: {len(encoded)} bytes")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
    parts.append(batch.tokens.astype("<f4").tobytes())
    if batch.gt_masks is not None:
        for mask in batch.gt_masks:
            parts.append(np.packbits(mask.reshape(-1)).tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write {path!r}: {exc}") from exc


class _Cursor:
    def __init__(self, raw: bytes, offset: int):
        self.raw = raw
        self.pos = offset

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFile(
                f"file ends inside {what}: need {n} bytes at offset {self.pos}, "
                f"have {len(self.raw) - self.pos}"
            )
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out


def read_ptfd(path) -> FeatureBatch:
    """Load a PTFD file; the exact inverse of :func:`write_ptfd`."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path!r}: {exc}") from exc
    header = _decode_header(raw)
    cur = _Cursor(raw, HEADER_SIZE)

    labels = np.frombuffer(cur.take(4 * header.b, "labels"), dtype="<u4")
    ids = []
    for i in range(header.b):
        (length,) = struct.unpack("<H", cur.take(2, f"id record {i}"))
        try:
            ids.append(cur.take(length, f"id record {i}").decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DimMismatch(f"id record {i} is not valid UTF-8") from exc
    n_token_bytes = 4 * header.b * header.h * header.w * header.d
    tokens = np.frombuffer(cur.take(n_token_bytes, "tokens"), dtype="<f4").reshape(
        header.b, header.h, header.w, header.d
    )
    gt_masks = None
    if header.has_masks:
        n_pix = header.img_h * header.img_w
        per_image = (n_pix + 7) // 8
        masks = np.empty((header.b, header.img_h, header.img_w), dtype=bool)
        for i in range(header.b):
            packed = np.frombuffer(cur.take(per_image, f"mask {i}"), dtype=np.uint8)
            masks[i] = np.unpackbits(packed, count=n_pix).reshape(
                header.img_h, header.img_w
            ).astype(bool)
        gt_masks = masks
    if cur.pos != len(raw):
        raise DimMismatch(
            f"{len(raw) - cur.pos} trailing bytes after payload; header dims "
            "disagree with file contents"
        )
    return FeatureBatch(
        tokens=tokens,
        labels=labels,
        num_classes=header.c,
        image_size=(header.img_h, header.img_w),
        ids=tuple(ids),
        gt_masks=gt_masks,
    )
