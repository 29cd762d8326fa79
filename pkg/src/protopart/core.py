"""Dense-tensor domain types and elementary vector kernels.

All accumulation happens in double precision; file interchange keeps patch
tokens in float32 (see :mod:`protopart.ptfd`). Instances are immutable value
objects: their arrays are marked read-only at construction time, so they can
be shared freely across threads. All kernels here are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolation, ZeroVector

_NORM_EPS = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FeatureBatch:
    """A batch of patch-token grids with per-image labels.

    tokens      float32 array [B, h, w, D] of patch embeddings
    labels      int array of length B, class ids in [0, num_classes)
    num_classes total number of classes C the labels index into
    image_size  (H, W) pixel size of the source images
    ids         per-image string identifiers, length B
    gt_masks    optional bool array [B, H, W]; True marks foreground
    """

    tokens: np.ndarray
    labels: np.ndarray
    num_classes: int
    image_size: tuple[int, int]
    ids: tuple[str, ...]
    gt_masks: np.ndarray | None = None

    def __post_init__(self):
        tokens = _frozen(np.asarray(self.tokens, dtype=np.float32))
        labels = _frozen(np.asarray(self.labels, dtype=np.uint32))
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        if tokens.ndim != 4:
            raise InvariantViolation(f"tokens must be [B, h, w, D], got shape {tokens.shape}")
        b, h, w, d = tokens.shape
        if b < 1 or h < 1 or w < 1 or d < 2:
            raise InvariantViolation(f"need B,h,w >= 1 and D >= 2, got {tokens.shape}")
        if not np.all(np.isfinite(tokens)):
            raise InvariantViolation("tokens contain non-finite values")
        if labels.shape != (b,):
            raise InvariantViolation(f"labels must have length B={b}, got {labels.shape}")
        if self.num_classes < 1 or int(labels.max(initial=0)) >= self.num_classes:
            raise InvariantViolation("every label must be < num_classes")
        if len(self.ids) != b:
            raise InvariantViolation(f"ids must have length B={b}, got {len(self.ids)}")
        hh, ww = self.image_size
        if hh < 1 or ww < 1:
            raise InvariantViolation("image_size entries must be >= 1")
        if self.gt_masks is not None:
            masks = _frozen(np.asarray(self.gt_masks).astype(bool))
            object.__setattr__(self, "gt_masks", masks)
            if masks.shape != (b, hh, ww):
                raise InvariantViolation(
                    f"gt_masks must be [B, H, W]={(b, hh, ww)}, got {masks.shape}"
                )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.tokens.shape

    def tokens_flat(self) -> np.ndarray:
        """Tokens reshaped to [B*h*w, D] in float64."""
        b, h, w, d = self.tokens.shape
        return self.tokens.reshape(b * h * w, d).astype(np.float64)

    def patch_labels(self) -> np.ndarray:
        """Image labels broadcast over the token grid, length B*h*w."""
        b, h, w, _ = self.tokens.shape
        return np.repeat(self.labels.astype(np.int64), h * w)


@dataclass(frozen=True)
class PrototypeBank:
    """Unit-norm part prototypes, one [K, D] block per class."""

    vectors: np.ndarray  # [C, K, D], float64, rows unit-norm

    def __post_init__(self):
        p = np.asarray(self.vectors, dtype=np.float64)
        if p.ndim != 3:
            raise InvariantViolation(f"prototypes must be [C, K, D], got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise InvariantViolation("prototypes contain non-finite values")
        norms = np.linalg.norm(p, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise InvariantViolation("every prototype must have unit L2 norm (+/- 1e-9)")
        object.__setattr__(self, "vectors", _frozen(p))

    @property
    def num_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def per_class(self) -> int:
        return self.vectors.shape[1]

    @property
    def dim(self) -> int:
        return self.vectors.shape[2]

    def class_block(self, c: int) -> np.ndarray:
        return self.vectors[c]

    def flat(self) -> np.ndarray:
        """All prototypes as one [C*K, D] matrix."""
        c, k, d = self.vectors.shape
        return self.vectors.reshape(c * k, d)


@dataclass(frozen=True)
class SimilarityTensor:
    """Cosine similarities between every token and every prototype.

    values has shape [B, h, w, C, K]; entries live in [-1, 1].
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 5:
            raise InvariantViolation(f"similarity tensor must be 5-d, got shape {v.shape}")
        if np.any(np.abs(v) > 1.0 + 1e-9):
            raise InvariantViolation("cosine similarities must lie in [-1, 1]")
        object.__setattr__(self, "values", _frozen(v))


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit L2 norm.

    Raises ZeroVector when the norm falls below 1e-12.
    """
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n < _NORM_EPS:
        raise ZeroVector(f"cannot normalize vector with norm {n:.3e}")
    return v / n


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization of a [N, D] matrix."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    if np.any(norms < _NORM_EPS):
        raise ZeroVector("matrix contains a row with (near-)zero norm")
    return m / norms


def cosine_similarity(f: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity between rows of ``f`` [N, D] and ``p`` [M, D].

    Returns an [N, M] array with out[i, j] = f_i . p_j / (|f_i| |p_j|).
    Raises ZeroVector if any row of either argument has (near-)zero norm.
    """
    fn = l2_normalize_rows(np.atleast_2d(f))
    pn = l2_normalize_rows(np.atleast_2d(p))
    return np.clip(fn @ pn.T, -1.0, 1.0)


def similarity_tensor(batch: FeatureBatch, bank: PrototypeBank, tokens: np.ndarray | None = None) -> SimilarityTensor:
    """Build the full [B, h, w, C, K] similarity tensor for a batch.

    ``tokens`` may override the batch's own tokens (e.g. adapted features)
    as a [B, h, w, D] float array.
    """
    b, h, w, d = batch.shape
    flat = batch.tokens_flat() if tokens is None else np.asarray(tokens, dtype=np.float64).reshape(b * h * w, d)
    sims = cosine_similarity(flat, bank.flat())
    return SimilarityTensor(sims.reshape(b, h, w, bank.num_classes, bank.per_class))
