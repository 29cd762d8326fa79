"""Versioned binary container for a trained model.

A bundle holds the prototype bank, the classifier head and a snapshot of
the run configuration. Layout mirrors the PTFD conventions (little-endian
throughout, checksummed header so any single-byte header corruption is
detected):

    bytes 0..3    magic ``b"PPMB"``
    bytes 4..7    version, u32, currently 1
    bytes 8..19   C, K, D as three u32
    bytes 20..23  config blob byte length, u32
    byte  24      reserved flags, must be zero
    bytes 25..27  u24 header checksum: plain byte sum of bytes 0..24
    ---
    config blob: UTF-8 ``key = value`` lines
    prototypes:  float64, [C, K, D] row-major
    modulation:  float64, [C, K]
    adapter:     float64, [D, D]

Parameters are stored in full double precision so that a reloaded bundle
predicts bit-identically to the one that was saved.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import PrototypeBank
from .errors import (
    BadMagic,
    CorruptHeader,
    DimMismatch,
    IoError,
    TruncatedFile,
    UnsupportedVersion,
)
from .head import ClassifierHead

MAGIC = b"PPMB"
VERSION = 1
HEADER_SIZE = 28


@dataclass(frozen=True)
class ModelBundle:
    """Prototype bank + classifier head + the config text they came from."""

    bank: PrototypeBank
    head: ClassifierHead
    config_text: str = ""

    def __post_init__(self):
        c, k, d = self.bank.vectors.shape
        if self.head.w.shape != (c, k) or self.head.adapter.shape != (d, d):
            raise DimMismatch("head shapes do not match the prototype bank")


def write_bundle(bundle: ModelBundle, path) -> None:
    c, k, d = bundle.bank.vectors.shape
    blob = bundle.config_text.encode("utf-8")
    head = MAGIC + struct.pack("<5I", VERSION, c, k, d, len(blob)) + b"\x00"
    head += (sum(head)).to_bytes(3, "little")
    parts = [
        head,
        blob,
        bundle.bank.vectors.astype("<f8").tobytes(),
        bundle.head.w.astype("<f8").tobytes(),
        bundle.head.adapter.astype("<f8").tobytes(),
    ]
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write bundle to {path!r}: {exc}") from exc


def read_bundle(path) -> ModelBundle:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read bundle from {path!r}: {exc}") from exc
    if len(raw) < HEADER_SIZE:
        raise TruncatedFile(f"file too short for bundle header: {len(raw)} bytes")
    if raw[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {raw[:4]!r}")
    if int.from_bytes(raw[25:28], "little") != sum(raw[:25]):
        raise CorruptHeader("bundle header checksum mismatch")
    version, c, k, d, blob_len = struct.unpack("<5I", raw[4:24])
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported bundle version {version}")
    if raw[24] != 0:
        raise UnsupportedVersion(f"unknown bundle flags 0x{raw[24]:02x}")
    if c < 1 or k < 1 or d < 1:
        raise DimMismatch("bundle dimensions must be >= 1")
    pos = HEADER_SIZE
    sizes = [blob_len, 8 * c * k * d, 8 * c * k, 8 * d * d]
    if len(raw) != HEADER_SIZE + sum(sizes):
        if len(raw) < HEADER_SIZE + sum(sizes):
            raise TruncatedFile("bundle payload shorter than header promises")
        raise DimMismatch("trailing bytes after bundle payload")
    try:
        config_text = raw[pos : pos + blob_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DimMismatch("config blob is not valid UTF-8") from exc
    pos += blob_len
    vectors = np.frombuffer(raw[pos : pos + sizes[1]], dtype="<f8").reshape(c, k, d)
    pos += sizes[1]
    w = np.frombuffer(raw[pos : pos + sizes[2]], dtype="<f8").reshape(c, k)
    pos += sizes[2]
    adapter = np.frombuffer(raw[pos : pos + sizes[3]], dtype="<f8").reshape(d, d)
    return ModelBundle(
        bank=PrototypeBank(vectors),
        head=ClassifierHead(w=w, adapter=adapter),
        config_text=config_text,
    )
