"""End-to-end orchestration: learn, fine-tune, evaluate, explain.

Functions here wire the stage-1 learner, the stage-2 trainer and the
metrics over PTFD files and model bundles; the CLI is a thin shell around
them. Everything is deterministic for a fixed config and seed: two runs
produce bit-identical bundles and reports.
"""

from __future__ import annotations

import json
import os
import re

import numpy as np

from .bundle import ModelBundle
from .config import RunConfig
from .core import FeatureBatch, PrototypeBank, cosine_similarity
from .errors import ConfigError, NotFound
from .head import ClassifierHead, adapt_features, finetune_stage2, init_head, predict
from .metrics import (
    BoxSpec,
    ImageMetrics,
    MaskThreshold,
    MetricReport,
    comprehensiveness_detail,
    distinctiveness,
    overlap_score,
    render_heatmap,
    upsample_bilinear,
)
from .ptfd import read_ptfd
from .stage1 import init_bank, learn_stage1

DIST_BOX_SWEEP = (0.125, 0.25, 0.375, 0.5)
COMP_TAU_SWEEP = (0.2, 0.4, 0.6, 0.8)


def split_batches(batch: FeatureBatch, size: int, keep_masks: bool = False) -> list[FeatureBatch]:
    """Chunk one loaded dump into training batches, preserving file order."""
    out = []
    for s in range(0, batch.shape[0], size):
        e = min(s + size, batch.shape[0])
        out.append(
            FeatureBatch(
                tokens=batch.tokens[s:e],
                labels=batch.labels[s:e],
                num_classes=batch.num_classes,
                image_size=batch.image_size,
                ids=batch.ids[s:e],
                gt_masks=batch.gt_masks[s:e] if keep_masks and batch.gt_masks is not None else None,
            )
        )
    return out


def load_train(cfg: RunConfig) -> FeatureBatch:
    if not cfg.train:
        raise ConfigError("no training dump configured (key 'train')")
    return read_ptfd(cfg.train)


def run_learn(cfg: RunConfig) -> ModelBundle:
    """Stage 1: discover prototypes; the head stays at its init values."""
    data = load_train(cfg)
    _, _, _, dim = data.shape
    bank = init_bank(data.num_classes, cfg.k, dim, cfg.seed)
    bank = learn_stage1(
        split_batches(data, cfg.batch_size),
        bank,
        cfg.stage1(),
        cfg.sinkhorn(),
        constrained=not cfg.no_constraints,
    )
    head = init_head(data.num_classes, cfg.k, dim)
    return ModelBundle(bank=bank, head=head, config_text=cfg.to_text())


def run_finetune(bundle: ModelBundle, cfg: RunConfig) -> ModelBundle:
    """Stage 2: train the head around the frozen bank (no-op when ablated)."""
    if cfg.no_finetune:
        return ModelBundle(bank=bundle.bank, head=bundle.head, config_text=cfg.to_text())
    data = load_train(cfg)
    head = finetune_stage2(
        split_batches(data, cfg.batch_size),
        bundle.bank,
        bundle.head,
        cfg.stage2(),
        sk=cfg.sinkhorn(),
        fg_method=cfg.effective_fg(),
        constrained=not cfg.no_constraints,
    )
    return ModelBundle(bank=bundle.bank, head=head, config_text=cfg.to_text())


def gt_class_maps(batch: FeatureBatch, bank: PrototypeBank, head: ClassifierHead) -> list[np.ndarray]:
    """Per image, the [K, h, w] similarity maps of its ground-truth class,
    computed on adapted features."""
    b, h, w, d = batch.shape
    maps = []
    for i in range(b):
        f = adapt_features(batch.tokens[i].astype(np.float64), head).reshape(h * w, d)
        sims = cosine_similarity(f, bank.class_block(int(batch.labels[i])))
        maps.append(sims.T.reshape(bank.per_class, h, w))
    return maps


def evaluate(bundle: ModelBundle, batch: FeatureBatch, cfg: RunConfig) -> tuple[MetricReport, dict]:
    """Score a test dump: accuracy, distinctiveness, comprehensiveness, plus
    box-size and threshold sweeps. Returns (report, sweeps)."""
    bank, head = bundle.bank, bundle.head
    maps = gt_class_maps(batch, bank, head)
    spec = BoxSpec.fraction(batch.image_size, cfg.box_frac)
    overlaps = [overlap_score(m, batch.image_size, spec) for m in maps]
    if batch.gt_masks is not None:
        ious, _ = comprehensiveness_detail(maps, list(batch.gt_masks), MaskThreshold(cfg.tau))
    else:
        ious = [None] * batch.shape[0]
    preds = [predict(batch.tokens[i].astype(np.float64), bank, head) for i in range(batch.shape[0])]
    per_image = tuple(
        ImageMetrics(
            image_id=batch.ids[i],
            overlap=overlaps[i],
            iou=ious[i],
            predicted=preds[i].class_id,
            label=int(batch.labels[i]),
        )
        for i in range(batch.shape[0])
    )
    valid_ious = [v for v in ious if v is not None]
    report = MetricReport(
        distinctiveness=1.0 - float(np.mean(overlaps)),
        comprehensiveness=float(np.mean(valid_ious)) if valid_ious else None,
        accuracy=float(np.mean([p.predicted == p.label for p in per_image])),
        per_image=per_image,
    )
    sweeps = {
        "distinctiveness_by_box_frac": {
            str(frac): distinctiveness(maps, batch.image_size, BoxSpec.fraction(batch.image_size, frac))
            for frac in DIST_BOX_SWEEP
        }
    }
    if batch.gt_masks is not None:
        sweep = {}
        for tau in COMP_TAU_SWEEP:
            vals, _ = comprehensiveness_detail(maps, list(batch.gt_masks), MaskThreshold(tau))
            ok = [v for v in vals if v is not None]
            sweep[str(tau)] = float(np.mean(ok)) if ok else None
        sweeps["comprehensiveness_by_tau"] = sweep
    return report, sweeps


def report_json(report: MetricReport, sweeps: dict) -> str:
    """Canonical JSON rendering; byte-stable for identical inputs."""
    payload = {
        "accuracy": report.accuracy,
        "distinctiveness": report.distinctiveness,
        "comprehensiveness": report.comprehensiveness,
        "sweeps": sweeps,
        "per_image": [
            {
                "id": r.image_id,
                "overlap": r.overlap,
                "iou": r.iou,
                "predicted": r.predicted,
                "label": r.label,
            }
            for r in report.per_image
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


_SAFE_ID = re.compile(r"[^A-Za-z0-9._-]")


def _safe_name(image_id: str) -> str:
    return _SAFE_ID.sub("_", image_id) or "image"


def explain_image(
    bundle: ModelBundle,
    batch: FeatureBatch,
    image_id: str,
    out_dir,
    top_k: int | None = None,
) -> list[str]:
    """Write heatmaps for the strongest prototypes of the predicted class.

    Produces one PGM+CSV pair per prototype (rendered at image resolution)
    plus a contributions CSV; returns the written paths. Unknown ids raise
    NotFound.
    """
    try:
        idx = batch.ids.index(image_id)
    except ValueError:
        raise NotFound(f"image id {image_id!r} not present in the dump") from None
    bank, head = bundle.bank, bundle.head
    b, h, w, d = batch.shape
    pred = predict(batch.tokens[idx].astype(np.float64), bank, head)
    c = pred.class_id
    order = np.argsort(-pred.contributions[c])
    if top_k is not None:
        order = order[:top_k]
    f = adapt_features(batch.tokens[idx].astype(np.float64), head).reshape(h * w, d)
    sims = cosine_similarity(f, bank.class_block(c))
    os.makedirs(out_dir, exist_ok=True)
    stem = _safe_name(image_id)
    written = []
    for k in order:
        act = upsample_bilinear(sims[:, k].reshape(h, w), batch.image_size)
        path = os.path.join(out_dir, f"{stem}_class{c}_proto{int(k)}.pgm")
        render_heatmap(act, path)
        written.append(path)
    contrib_path = os.path.join(out_dir, f"{stem}_contributions.csv")
    with open(contrib_path, "w", encoding="utf-8") as fh:
        fh.write("class,prototype,activation,weight,contribution,token_row,token_col\n")
        for k in order:
            row, col = pred.locations[c, k]
            fh.write(
                f"{c},{int(k)},{float(pred.activations[c, k])!r},{float(head.w[c, k])!r},"
                f"{float(pred.contributions[c, k])!r},{int(row)},{int(col)}\n"
            )
    written.append(contrib_path)
    return written
