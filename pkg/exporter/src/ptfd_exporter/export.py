"""Scan an image folder, run a backbone, write one PTFD dump.

Input layout is one subdirectory per class (CUB style); class ids follow
the sorted directory names, and the id -> name mapping lands in a
``<out>.labels.txt`` sidecar. An optional mask root mirrors the image tree
with a ``.png`` segmentation per image; masks are resampled to the
backbone input size by nearest neighbor. Inference runs image by image in
sorted order, so output is deterministic for a fixed backbone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .backbones import INPUT_SIZE, Backbone, load_backbone
from .errors import DecodeError, LayoutError
from .ptfd_writer import encode_ptfd, write_ptfd_atomic

_IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".gif"}


@dataclass(frozen=True)
class ExportManifest:
    """Everything one export run needs, resolved up front."""

    backbone: str
    input_root: str
    images: tuple[tuple[str, int], ...]  # (path relative to root, class id)
    class_names: tuple[str, ...]
    mask_root: str | None = None


def build_manifest(input_root: str, backbone: str, mask_root: str | None = None) -> ExportManifest:
    """Resolve the class-per-directory layout under ``input_root``."""
    if not os.path.isdir(input_root):
        raise LayoutError(f"input root {input_root!r} is not a directory")
    class_names = sorted(
        d for d in os.listdir(input_root) if os.path.isdir(os.path.join(input_root, d))
    )
    if not class_names:
        raise LayoutError(f"input root {input_root!r} contains no class directories")
    images: list[tuple[str, int]] = []
    for label, name in enumerate(class_names):
        files = sorted(
            f
            for f in os.listdir(os.path.join(input_root, name))
            if os.path.splitext(f)[1].lower() in _IMAGE_EXTS
        )
        if not files:
            raise LayoutError(f"class directory {name!r} contains no images")
        images.extend((os.path.join(name, f), label) for f in files)
    return ExportManifest(
        backbone=backbone,
        input_root=input_root,
        images=tuple(images),
        class_names=tuple(class_names),
        mask_root=mask_root,
    )


def _load_image(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize((INPUT_SIZE, INPUT_SIZE), Image.BILINEAR)
    except (OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path!r}: {exc}") from exc
    return np.asarray(rgb, dtype=np.float32) / 255.0


def _load_mask(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            gray = img.convert("L").resize((INPUT_SIZE, INPUT_SIZE), Image.NEAREST)
    except (OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode mask {path!r}: {exc}") from exc
    return np.asarray(gray) > 127


def _mask_path(mask_root: str, rel_image: str) -> str:
    stem, _ = os.path.splitext(rel_image)
    path = os.path.join(mask_root, stem + ".png")
    if not os.path.exists(path):
        raise LayoutError(f"no mask found for {rel_image!r} (expected {path!r})")
    return path


def export(manifest: ExportManifest, out_path: str) -> Backbone:
    """Run the backbone over every image and write PTFD + label sidecar."""
    backbone = load_backbone(manifest.backbone)
    h, w = backbone.grid
    n = len(manifest.images)
    tokens = np.empty((n, h, w, backbone.dim), dtype=np.float32)
    labels = np.empty(n, dtype=np.uint32)
    masks = np.empty((n, INPUT_SIZE, INPUT_SIZE), dtype=bool) if manifest.mask_root else None
    ids = []
    for i, (rel, label) in enumerate(manifest.images):
        tokens[i] = backbone.embed(_load_image(os.path.join(manifest.input_root, rel)))
        labels[i] = label
        ids.append(rel)
        if masks is not None:
            masks[i] = _load_mask(_mask_path(manifest.mask_root, rel))
    payload = encode_ptfd(
        tokens,
        labels,
        num_classes=len(manifest.class_names),
        image_size=(INPUT_SIZE, INPUT_SIZE),
        ids=ids,
        gt_masks=masks,
    )
    write_ptfd_atomic(payload, out_path)
    label_map = "".join(f"{i}\t{name}\n" for i, name in enumerate(manifest.class_names))
    write_ptfd_atomic(label_map.encode("utf-8"), out_path + ".labels.txt")
    return backbone
