"""Prototype-activation classification and stage-2 fine-tuning.

The classifier scores an image by max-pooling the cosine similarity of its
(adapted) tokens against every prototype and summing, per class, the pooled
activations weighted by learned modulation weights. Stage 2 trains those
weights plus a zero-initialized residual linear adapter ``f' = f + f W_a``
(identity at init, so the untrained head reproduces the stage-1 classifier
exactly) with plain SGD on cross-entropy plus an in-class patch-prototype
contrastive term. Prototypes stay frozen; gradients are hand-derived, with
the max pool routing its gradient to the argmax token only.

Loss evaluation is pure per image and could run in parallel; parameter
updates are serialized per step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import FeatureBatch, PrototypeBank, cosine_similarity
from .errors import InvalidParams, InvariantViolation, ZeroVector
from .sinkhorn import SinkhornConfig, harden_assignment, sinkhorn_plan
from .stage1 import FgMethod, extract_foreground

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class ClassifierHead:
    """Trainable stage-2 state: modulation weights [C, K] and adapter [D, D]."""

    w: np.ndarray
    adapter: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        a = np.asarray(self.adapter, dtype=np.float64)
        if w.ndim != 2:
            raise InvariantViolation(f"modulation weights must be [C, K], got {w.shape}")
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvariantViolation(f"adapter must be square [D, D], got {a.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(a))):
            raise InvariantViolation("head parameters contain non-finite values")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "adapter", a)


def init_head(num_classes: int, per_class: int, dim: int, modulation: float = 0.2) -> ClassifierHead:
    """Default head: uniform modulation weights, all-zero adapter."""
    return ClassifierHead(
        w=np.full((num_classes, per_class), modulation), adapter=np.zeros((dim, dim))
    )


@dataclass(frozen=True)
class Stage2Config:
    lambda_ppc: float = 0.8
    epochs: int = 5
    lr_adapter: float = 1e-4
    lr_w: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.lambda_ppc < 0:
            raise InvalidParams(f"lambda_ppc must be >= 0, got {self.lambda_ppc}")
        if self.epochs < 0:
            raise InvalidParams(f"epochs must be >= 0, got {self.epochs}")
        if not (self.lr_adapter > 0 and self.lr_w > 0):
            raise InvalidParams("learning rates must be > 0")


def adapt_features(tokens: np.ndarray, head: ClassifierHead) -> np.ndarray:
    """Residual linear map ``f' = f + f W_a`` applied over the last axis."""
    tokens = np.asarray(tokens, dtype=np.float64)
    return tokens + tokens @ head.adapter


def prototype_activations(
    f_img: np.ndarray, bank: PrototypeBank
) -> tuple[np.ndarray, np.ndarray]:
    """Max-pooled cosine similarity of one image's tokens to every prototype.

    f_img is an [h, w, D] token grid. Returns (g, loc) where g[c, k] is the
    best similarity to prototype (c, k) over all tokens and loc[c, k] is the
    (row, col) of the winning token (first winner on exact ties).
    """
    f_img = np.asarray(f_img, dtype=np.float64)
    if f_img.ndim != 3:
        raise InvalidParams(f"expected an [h, w, D] token grid, got {f_img.shape}")
    h, w, d = f_img.shape
    flat = f_img.reshape(h * w, d)
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms < _NORM_EPS):
        raise ZeroVector("image contains a zero-norm token")
    sims = (flat / norms[:, None]) @ bank.flat().T  # [h*w, C*K]
    best = np.argmax(sims, axis=0)
    g = sims[best, np.arange(sims.shape[1])].reshape(bank.num_classes, bank.per_class)
    loc = np.stack([best // w, best % w], axis=-1).reshape(bank.num_classes, bank.per_class, 2)
    return np.clip(g, -1.0, 1.0), loc


def class_logits(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-class sum of modulated activations; class c sees only its own row."""
    g = np.asarray(g, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if g.shape != w.shape:
        raise InvalidParams(f"activation shape {g.shape} != weight shape {w.shape}")
    return (w * g).sum(axis=1)


def _log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=axis, keepdims=True))


def ppc_loss(
    f_fg: np.ndarray, labels: np.ndarray, assign: np.ndarray, bank: PrototypeBank
) -> float:
    """In-class contrastive pull of each patch toward its assigned prototype.

    Mean over tokens of the softmax cross-entropy, over the K same-class
    prototypes, of the raw dot products f_i . P_c (the assigned prototype is
    the target; the remaining K-1 act as negatives). Zero when K == 1.
    """
    f_fg = np.atleast_2d(np.asarray(f_fg, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    assign = np.asarray(assign, dtype=np.int64)
    if not f_fg.shape[0]:
        return 0.0
    total = 0.0
    for c in np.unique(labels):
        rows = labels == c
        z = f_fg[rows] @ bank.class_block(int(c)).T  # [n_c, K] raw dots
        total += -_log_softmax(z)[np.arange(z.shape[0]), assign[rows]].sum()
    return float(total / f_fg.shape[0])


@dataclass(frozen=True)
class StepData:
    """Frozen per-step context for the differentiable loss: which tokens are
    foreground and which same-class prototype each one is assigned to."""

    fg_index: np.ndarray  # int indices into the flattened batch tokens
    fg_labels: np.ndarray  # class per foreground token
    fg_assign: np.ndarray  # assigned prototype within the class block


def prepare_step(
    batch: FeatureBatch,
    bank: PrototypeBank,
    head: ClassifierHead,
    sk: SinkhornConfig,
    fg_method: FgMethod = FgMethod.PCA_THRESHOLD,
    constrained: bool = True,
) -> StepData:
    """Recompute foreground and patch-prototype assignments for one batch.

    Foreground comes from the raw tokens; assignments come from one
    balanced-assignment solve per class on the current adapted features
    against the frozen prototypes (or a plain per-token argmax when
    ``constrained`` is off), so the contrastive target tracks the moving
    feature space.
    """
    fg = extract_foreground(batch, fg_method)
    keep = np.flatnonzero(fg.mask.reshape(-1))
    labels = batch.patch_labels()[keep]
    adapted = adapt_features(batch.tokens_flat(), head)[keep]
    assign = np.zeros(keep.shape[0], dtype=np.int64)
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        sims = cosine_similarity(adapted[rows], bank.class_block(int(c)))
        if constrained:
            assign[rows] = harden_assignment(sinkhorn_plan(sims, sk)).assign
        else:
            assign[rows] = np.argmax(sims, axis=1)
    return StepData(fg_index=keep, fg_labels=labels, fg_assign=assign)


@dataclass(frozen=True)
class LossAndGrads:
    total: float
    ce: float
    ppc: float
    grad_w: np.ndarray
    grad_adapter: np.ndarray


def total_loss(
    batch: FeatureBatch,
    bank: PrototypeBank,
    head: ClassifierHead,
    cfg: Stage2Config,
    step: StepData | None = None,
    sk: SinkhornConfig | None = None,
    fg_method: FgMethod = FgMethod.PCA_THRESHOLD,
    constrained: bool = True,
) -> LossAndGrads:
    """Cross-entropy plus weighted contrastive loss, with analytic gradients
    for the modulation weights and the adapter.

    The gradient flows through the max pool via the argmax token only and
    through both loss terms into the adapter; prototypes receive none. When
    ``step`` is omitted it is recomputed here; pass a precomputed one to
    hold assignments fixed (the trainer does, once per step).
    """
    if step is None:
        step = prepare_step(batch, bank, head, sk or SinkhornConfig(), fg_method, constrained)
    b, h, w, d = batch.shape
    hw = h * w
    c_classes, k_protos = bank.num_classes, bank.per_class
    p_flat = bank.flat()  # [C*K, D]

    x = batch.tokens_flat()  # raw [B*hw, D]
    f = x + x @ head.adapter
    d_f = np.zeros_like(f)

    ce_sum = 0.0
    grad_w = np.zeros_like(head.w)
    for img in range(b):
        rows = slice(img * hw, (img + 1) * hw)
        f_img = f[rows]
        norms = np.linalg.norm(f_img, axis=1)
        if np.any(norms < _NORM_EPS):
            raise ZeroVector("adapted features contain a zero-norm token")
        f_hat = f_img / norms[:, None]
        sims = f_hat @ p_flat.T  # [hw, C*K]
        best = np.argmax(sims, axis=0)
        g_flat = sims[best, np.arange(sims.shape[1])]
        g = g_flat.reshape(c_classes, k_protos)
        logits = (head.w * g).sum(axis=1)
        log_p = _log_softmax(logits)
        y = int(batch.labels[img])
        ce_sum += -log_p[y]
        dlogits = np.exp(log_p)
        dlogits[y] -= 1.0
        grad_w += dlogits[:, None] * g
        # route dL/dg through the argmax token of each (c, k)
        dg_flat = (dlogits[:, None] * head.w).reshape(-1)
        for j in np.flatnonzero(dg_flat):
            t = best[j]
            coef = dg_flat[j]
            d_f[img * hw + t] += coef * (p_flat[j] - g_flat[j] * f_hat[t]) / norms[t]
    ce = ce_sum / b
    grad_w /= b
    d_f /= b

    ppc = 0.0
    if step.fg_index.size:
        f_fg = f[step.fg_index]
        d_fg = np.zeros_like(f_fg)
        loss_sum = 0.0
        for c in np.unique(step.fg_labels):
            rows = np.flatnonzero(step.fg_labels == c)
            block = bank.class_block(int(c))
            z = f_fg[rows] @ block.T
            log_q = _log_softmax(z)
            tgt = step.fg_assign[rows]
            loss_sum += -log_q[np.arange(rows.size), tgt].sum()
            dz = np.exp(log_q)
            dz[np.arange(rows.size), tgt] -= 1.0
            d_fg[rows] = dz @ block
        n_fg = step.fg_index.size
        ppc = float(loss_sum / n_fg)
        d_f[step.fg_index] += cfg.lambda_ppc * d_fg / n_fg

    grad_adapter = x.T @ d_f
    return LossAndGrads(
        total=float(ce + cfg.lambda_ppc * ppc),
        ce=float(ce),
        ppc=ppc,
        grad_w=grad_w,
        grad_adapter=grad_adapter,
    )


def finetune_stage2(
    data: Sequence[FeatureBatch],
    bank: PrototypeBank,
    head: ClassifierHead,
    cfg: Stage2Config,
    sk: SinkhornConfig | None = None,
    fg_method: FgMethod = FgMethod.PCA_THRESHOLD,
    constrained: bool = True,
) -> ClassifierHead:
    """Plain SGD over shuffled batches for ``cfg.epochs``; returns the
    trained head, leaving the prototype bank untouched."""
    sk = sk or SinkhornConfig()
    w = np.array(head.w)
    adapter = np.array(head.adapter)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        for b_idx in order:
            batch = data[b_idx]
            current = ClassifierHead(w=w, adapter=adapter)
            step = prepare_step(batch, bank, current, sk, fg_method, constrained)
            out = total_loss(batch, bank, current, cfg, step=step)
            w = w - cfg.lr_w * out.grad_w
            adapter = adapter - cfg.lr_adapter * out.grad_adapter
    return ClassifierHead(w=w, adapter=adapter)


@dataclass(frozen=True)
class Prediction:
    """Predicted class plus the evidence behind it, for explanations."""

    class_id: int
    logits: np.ndarray  # [C]
    activations: np.ndarray  # [C, K]
    locations: np.ndarray  # [C, K, 2] token (row, col) of each max
    contributions: np.ndarray  # [C, K] modulated activation w * g


def predict(f_img: np.ndarray, bank: PrototypeBank, head: ClassifierHead) -> Prediction:
    """Classify one image's token grid; ties go to the lowest class id.

    ``f_img`` is the raw [h, w, D] grid; the head's adapter is applied here.
    """
    adapted = adapt_features(f_img, head)
    g, loc = prototype_activations(adapted, bank)
    logits = class_logits(g, head.w)
    return Prediction(
        class_id=int(np.argmax(logits)),
        logits=logits,
        activations=g,
        locations=loc,
        contributions=head.w * g,
    )
