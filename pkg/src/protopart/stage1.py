"""Stage-1 training: foreground extraction, per-class balanced clustering,
and momentum updates of the prototype bank.

Prototypes start from a seeded normal draw (std 0.02) projected to the unit
sphere. Each batch contributes one balanced-assignment solve per class
present, followed by an exponential moving average of the cluster means;
patches are unit-normalized before averaging so the mean lives on the same
scale as the prototypes. Empty clusters keep their previous value, and the
whole procedure is deterministic given the seed and the batch order (the
EMA makes order part of the contract). Per-class updates inside one batch
touch disjoint bank slices; batches are processed sequentially.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import FeatureBatch, PrototypeBank, cosine_similarity, l2_normalize, l2_normalize_rows
from .errors import DegenerateFeatures, InvalidParams, InvariantViolation
from .sinkhorn import HardAssignment, SinkhornConfig, harden_assignment, sinkhorn_plan


class FgMethod(enum.Enum):
    """How foreground tokens are selected before clustering."""

    PCA_THRESHOLD = "pca"
    GROUND_TRUTH_MASK = "gt"
    NONE = "none"


@dataclass(frozen=True)
class Stage1Config:
    beta: float = 0.99
    epochs: int = 1
    batch_size: int = 128
    seed: int = 0
    fg_method: FgMethod = FgMethod.PCA_THRESHOLD

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidParams(f"beta must lie in [0, 1], got {self.beta}")
        if self.epochs < 0:
            raise InvalidParams(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidParams(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class ForegroundMask:
    """Token-resolution foreground mask.

    ``degenerate[b]`` marks images that ended up with zero foreground
    tokens; such images simply contribute nothing downstream.
    """

    mask: np.ndarray  # bool [B, h, w]
    degenerate: tuple[bool, ...]


def _center_window(h: int, w: int) -> tuple[slice, slice]:
    ch, cw = (h + 1) // 2, (w + 1) // 2
    top, left = (h - ch) // 2, (w - cw) // 2
    return slice(top, top + ch), slice(left, left + cw)


def extract_foreground_pca(tokens: np.ndarray) -> ForegroundMask:
    """Split tokens into foreground/background along the first principal
    component of the whole batch.

    The component is oriented so that the mean projection over each image's
    central window (ceil(h/2) x ceil(w/2)) is nonnegative, i.e. whatever
    dominates image centers counts as foreground; the mask keeps tokens with
    nonnegative projection. Raises DegenerateFeatures when the token
    covariance is numerically rank zero.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 4:
        raise InvalidParams(f"tokens must be [B, h, w, D], got shape {tokens.shape}")
    b, h, w, d = tokens.shape
    if b * h * w < 2:
        raise InvalidParams("need at least two tokens for a principal component")
    flat = tokens.reshape(b * h * w, d)
    centered = flat - flat.mean(axis=0)
    cov = centered.T @ centered / centered.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[-1] < 1e-10:
        raise DegenerateFeatures(
            f"token covariance is numerically rank zero (top eigenvalue {eigvals[-1]:.3e})"
        )
    proj = (centered @ eigvecs[:, -1]).reshape(b, h, w)
    rows, cols = _center_window(h, w)
    if proj[:, rows, cols].mean() < 0:
        proj = -proj
    mask = proj >= 0
    return ForegroundMask(mask=mask, degenerate=tuple(~mask.reshape(b, -1).any(axis=1)))


def downsample_mask_majority(gt_masks: np.ndarray, h: int, w: int) -> np.ndarray:
    """Reduce [B, H, W] pixel masks to [B, h, w] token cells by majority vote.

    Cell (i, j) covers pixel rows [i*H//h, (i+1)*H//h) and the analogous
    columns; a cell is foreground iff strictly more than half its pixels are.
    """
    gt_masks = np.asarray(gt_masks).astype(bool)
    b, img_h, img_w = gt_masks.shape
    row_edges = (np.arange(h + 1) * img_h) // h
    col_edges = (np.arange(w + 1) * img_w) // w
    out = np.zeros((b, h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            cell = gt_masks[:, row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]]
            n_pix = cell.shape[1] * cell.shape[2]
            out[:, i, j] = cell.reshape(b, -1).sum(axis=1) * 2 > n_pix
    return out


def extract_foreground(batch: FeatureBatch, method: FgMethod) -> ForegroundMask:
    """Dispatch to the configured foreground extractor."""
    b, h, w, _ = batch.shape
    if method is FgMethod.PCA_THRESHOLD:
        return extract_foreground_pca(batch.tokens)
    if method is FgMethod.GROUND_TRUTH_MASK:
        if batch.gt_masks is None:
            raise InvariantViolation("fg_method=GROUND_TRUTH_MASK needs gt_masks in the batch")
        mask = downsample_mask_majority(batch.gt_masks, h, w)
        return ForegroundMask(mask=mask, degenerate=tuple(~mask.reshape(b, -1).any(axis=1)))
    mask = np.ones((b, h, w), dtype=bool)
    return ForegroundMask(mask=mask, degenerate=(False,) * b)


def init_bank(num_classes: int, per_class: int, dim: int, seed: int) -> PrototypeBank:
    """Fresh bank: normal draws with std 0.02, projected to the unit sphere."""
    rng = np.random.default_rng(seed)
    raw = rng.normal(0.0, 0.02, size=(num_classes, per_class, dim))
    return PrototypeBank(l2_normalize_rows(raw.reshape(-1, dim)).reshape(raw.shape))


def _ema_update(p_c: np.ndarray, means: np.ndarray, nonempty: np.ndarray, beta: float) -> np.ndarray:
    if beta == 1.0:  # degenerate EMA: bit-exact identity
        return p_c.copy()
    out = p_c.copy()
    for k in np.flatnonzero(nonempty):
        out[k] = l2_normalize(beta * p_c[k] + (1.0 - beta) * means[k])
    return out


def update_prototypes(
    p_c: np.ndarray, f_c: np.ndarray, assign: HardAssignment, beta: float
) -> np.ndarray:
    """Momentum update of one class block from its assigned patches.

    Each cluster with at least one patch moves to the unit-normalized EMA
    ``beta * P_k + (1 - beta) * mean(normalized patches)``; empty clusters
    are returned unchanged.
    """
    p_c = np.asarray(p_c, dtype=np.float64)
    k_protos = p_c.shape[0]
    idx = assign.assign
    if idx.size and idx.max() >= k_protos:
        raise InvalidParams("assignment refers to a prototype outside the class block")
    if np.any(np.abs(np.linalg.norm(p_c, axis=1) - 1.0) > 1e-9):
        raise InvariantViolation("prototype rows must be unit-norm")
    fn = l2_normalize_rows(np.asarray(f_c, dtype=np.float64))
    means = np.zeros_like(p_c)
    nonempty = np.zeros(k_protos, dtype=bool)
    for k in range(k_protos):
        members = fn[idx == k]
        if members.shape[0]:
            means[k] = members.mean(axis=0)
            nonempty[k] = True
    return _ema_update(p_c, means, nonempty, beta)


def _unconstrained_means(f_c: np.ndarray, p_c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Constraint-free variant: drop both the one-assignment-per-patch and
    # the equal-share requirements, leaving the trivial maximizer of the
    # linear objective -- every patch joins every positively-similar
    # cluster. Kept for the ablation flag; it collapses prototypes by design.
    sims = cosine_similarity(f_c, p_c)
    fn = l2_normalize_rows(np.asarray(f_c, dtype=np.float64))
    member = sims > 0.0
    counts = member.sum(axis=0)
    means = np.zeros_like(p_c)
    nonempty = counts > 0
    for k in np.flatnonzero(nonempty):
        means[k] = fn[member[:, k]].mean(axis=0)
    return means, nonempty


def learn_stage1(
    data: Sequence[FeatureBatch],
    bank: PrototypeBank,
    cfg: Stage1Config,
    sk: SinkhornConfig,
    constrained: bool = True,
) -> PrototypeBank:
    """Run the full stage-1 pass and return the updated bank.

    For every batch and every class with foreground tokens present, solve
    the balanced assignment of those tokens to the class prototypes and
    apply the momentum update. ``constrained=False`` switches to the
    unconstrained assignment rule (ablation).
    """
    vectors = np.array(bank.vectors)
    for _ in range(cfg.epochs):
        for batch in data:
            if batch.num_classes != bank.num_classes or batch.shape[3] != bank.dim:
                raise InvariantViolation("batch C/D does not match the prototype bank")
            fg = extract_foreground(batch, cfg.fg_method)
            flat = batch.tokens_flat()
            labels = batch.patch_labels()
            keep = fg.mask.reshape(-1)
            for c in np.unique(labels[keep]):
                f_c = flat[keep & (labels == c)]
                if not f_c.shape[0]:
                    continue
                if constrained:
                    sims = cosine_similarity(f_c, vectors[c])
                    assign = harden_assignment(sinkhorn_plan(sims, sk))
                    vectors[c] = update_prototypes(vectors[c], f_c, assign, cfg.beta)
                else:
                    means, nonempty = _unconstrained_means(f_c, vectors[c])
                    vectors[c] = _ema_update(vectors[c], means, nonempty, cfg.beta)
    return PrototypeBank(vectors)
