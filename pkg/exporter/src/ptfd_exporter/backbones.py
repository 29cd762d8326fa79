"""Patch-token backbones.

Two families are exposed:

* ``seeded-tiny``: a self-contained deterministic embedder (seeded random
  projection of 16x16 patches through one tanh layer). It needs no
  downloads and exists so exports can be produced and tested offline.
* ``dino_vitb16`` / ``dinov2_vitb14`` / ``dinov2_vits14``: self-distilled
  vision transformers fetched through torch hub. Constructing them
  requires torch and network access to the weight hosts; any failure
  surfaces as BackboneUnavailable.

All backbones consume 224x224 RGB arrays scaled to [0, 1] and emit a
[h, w, D] float32 token grid from their final layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BackboneUnavailable

INPUT_SIZE = 224
_TINY_SEED = 0x5EED


@dataclass(frozen=True)
class Backbone:
    name: str
    grid: tuple[int, int]
    dim: int
    embed: Callable[[np.ndarray], np.ndarray]  # [224, 224, 3] -> [h, w, D] float32


def _seeded_tiny() -> Backbone:
    patch = 16
    grid = INPUT_SIZE // patch
    dim = 32
    hidden = 64
    rng = np.random.default_rng(_TINY_SEED)
    w1 = rng.normal(0.0, 1.0 / np.sqrt(3 * patch * patch), size=(3 * patch * patch, hidden))
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, dim))

    def embed(image: np.ndarray) -> np.ndarray:
        x = image.reshape(grid, patch, grid, patch, 3).transpose(0, 2, 1, 3, 4)
        x = x.reshape(grid, grid, 3 * patch * patch) * 2.0 - 1.0
        tokens = np.tanh(x @ w1) @ w2
        return tokens.astype(np.float32)

    return Backbone(name="seeded-tiny", grid=(grid, grid), dim=dim, embed=embed)


def _torch_hub(name: str) -> Backbone:
    try:
        import torch
    except ImportError as exc:
        raise BackboneUnavailable(f"backbone {name!r} needs torch installed") from exc
    hubs = {
        "dino_vitb16": ("facebookresearch/dino:main", "dino_vitb16", 16),
        "dinov2_vitb14": ("facebookresearch/dinov2", "dinov2_vitb14", 14),
        "dinov2_vits14": ("facebookresearch/dinov2", "dinov2_vits14", 14),
    }
    repo, entry, patch = hubs[name]
    try:
        model = torch.hub.load(repo, entry)
    except Exception as exc:
        raise BackboneUnavailable(f"cannot fetch backbone {name!r}: {exc}") from exc
    model.eval()
    grid = INPUT_SIZE // patch
    mean = np.array([0.485, 0.456, 0.406], dtype=np.float32)
    std = np.array([0.229, 0.224, 0.225], dtype=np.float32)

    def embed(image: np.ndarray) -> np.ndarray:
        x = ((image.astype(np.float32) - mean) / std).transpose(2, 0, 1)[None]
        with torch.no_grad():
            tensor = torch.from_numpy(x)
            if hasattr(model, "forward_features"):
                out = model.forward_features(tensor)
                patches = out["x_norm_patchtokens"] if isinstance(out, dict) else out[:, 1:]
            else:
                patches = model.get_intermediate_layers(tensor, n=1)[0][:, 1:]
        tokens = patches[0].cpu().numpy().astype(np.float32)
        return tokens.reshape(grid, grid, -1)

    probe = embed(np.zeros((INPUT_SIZE, INPUT_SIZE, 3), dtype=np.float32))
    return Backbone(name=name, grid=(grid, grid), dim=probe.shape[-1], embed=embed)


def load_backbone(name: str) -> Backbone:
    if name == "seeded-tiny":
        return _seeded_tiny()
    if name in ("dino_vitb16", "dinov2_vitb14", "dinov2_vits14"):
        return _torch_hub(name)
    raise BackboneUnavailable(f"unknown backbone {name!r}")
