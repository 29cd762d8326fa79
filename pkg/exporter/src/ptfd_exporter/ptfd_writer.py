"""Standalone writer for the PTFD interchange format.

This module implements the byte layout the engine documents for its PTFD
files; it deliberately does not import the engine, so the file format is
the only contract between the two packages. All integers little-endian:

    bytes 0..3    magic ``b"PTFD"``
    bytes 4..7    version, u32 = 1
    bytes 8..35   B, h, w, D, C, H, W as seven u32
    byte  36      flags: bit 0 = ground-truth masks present
    bytes 37..39  u24 checksum: plain byte sum of bytes 0..36
    ---
    B labels (u32), B id records (u16 length + UTF-8 bytes),
    tokens as float32 [B, h, w, D] row-major,
    then per image the H*W mask bits packed MSB-first, byte-padded.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"PTFD"
VERSION = 1


def encode_ptfd(
    tokens: np.ndarray,
    labels,
    num_classes: int,
    image_size: tuple[int, int],
    ids,
    gt_masks: np.ndarray | None = None,
) -> bytes:
    tokens = np.ascontiguousarray(tokens, dtype="<f4")
    b, h, w, d = tokens.shape
    img_h, img_w = image_size
    flags = 1 if gt_masks is not None else 0
    header = MAGIC + struct.pack("<8I", VERSION, b, h, w, d, num_classes, img_h, img_w)
    header += bytes([flags])
    header += sum(header).to_bytes(3, "little")
    parts = [header, np.asarray(labels, dtype="<u4").tobytes()]
    for image_id in ids:
        raw = str(image_id).encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(tokens.tobytes())
    if gt_masks is not None:
        for mask in np.asarray(gt_masks, dtype=bool):
            parts.append(np.packbits(mask.reshape(-1)).tobytes())
    return b"".join(parts)


def write_ptfd_atomic(payload: bytes, path: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
