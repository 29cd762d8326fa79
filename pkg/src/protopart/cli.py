"""Command-line entry point.

Subcommands: synth, learn, finetune, eval, explain, metrics. Every config
key is also a flag; ``--config`` points at a ``key = value`` file whose
entries the flags override. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bundle as bundle_io
from . import synth
from .config import load_config
from .errors import ConfigError, EngineError, InvalidParams
from .metrics import BoxSpec, MaskThreshold, comprehensiveness, distinctiveness
from .pipeline import evaluate, explain_image, report_json, run_finetune, run_learn
from .ptfd import read_ptfd, write_ptfd


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--train", help="training PTFD file")
    p.add_argument("--test", help="test PTFD file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--k", type=int, help="prototypes per class")
    p.add_argument("--kappa", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--marginal-tol", dest="marginal_tol", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--epochs1", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--fg-method", dest="fg_method", choices=["pca", "gt", "none"])
    p.add_argument("--lambda-ppc", dest="lambda_ppc", type=float)
    p.add_argument("--epochs2", type=int)
    p.add_argument("--lr-adapter", dest="lr_adapter", type=float)
    p.add_argument("--lr-w", dest="lr_w", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--box-frac", dest="box_frac", type=float)
    p.add_argument("--tau", type=float)
    for flag in ("no_constraints", "no_foreground", "no_finetune", "no_ppc"):
        p.add_argument(
            f"--{flag.replace('_', '-')}", dest=flag, action="store_const", const=True
        )


def _config_from_args(args: argparse.Namespace):
    keys = (
        "train test out k kappa max_iters marginal_tol beta epochs1 batch_size "
        "fg_method lambda_ppc epochs2 lr_adapter lr_w seed box_frac tau "
        "no_constraints no_foreground no_finetune no_ppc"
    ).split()
    overrides = {k: getattr(args, k, None) for k in keys}
    return load_config(args.config, overrides)


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = synth.SynthSpec(
        num_classes=args.classes,
        per_class=args.parts,
        dim=args.dim,
        sigma=args.sigma,
        n_train=args.n_train,
        n_test=args.n_test,
        occlusion_rate=args.occlusion_rate,
        orthonormal=not args.loose_directions,
        seed=args.seed,
    )
    train, test, truth = synth.generate(spec)
    os.makedirs(args.out, exist_ok=True)
    train_path = os.path.join(args.out, "train.ptfd")
    test_path = os.path.join(args.out, "test.ptfd")
    truth_path = os.path.join(args.out, "centers.npz")
    write_ptfd(train, train_path)
    write_ptfd(test, test_path)
    synth.save_truth(truth, truth_path)
    print(f"wrote {train_path} ({train.shape[0]} images)")
    print(f"wrote {test_path} ({test.shape[0]} images)")
    print(f"wrote {truth_path}")
    return 0


def _cmd_learn(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    bundle = run_learn(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "stage1.bundle")
    bundle_io.write_bundle(bundle, path)
    print(f"wrote {path}")
    return 0


def _cmd_finetune(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    bundle = bundle_io.read_bundle(args.bundle)
    tuned = run_finetune(bundle, cfg)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "model.bundle")
    bundle_io.write_bundle(tuned, path)
    print(f"wrote {path}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not cfg.test:
        raise ConfigError("no test dump configured (key 'test')")
    bundle = bundle_io.read_bundle(args.bundle)
    batch = read_ptfd(cfg.test)
    report, sweeps = evaluate(bundle, batch, cfg)
    print(f"accuracy          {report.accuracy:.4f}")
    print(f"distinctiveness   {report.distinctiveness:.4f}  (box {cfg.box_frac} of image)")
    if report.comprehensiveness is not None:
        print(f"comprehensiveness {report.comprehensiveness:.4f}  (tau {cfg.tau})")
    for frac, value in sweeps["distinctiveness_by_box_frac"].items():
        print(f"  distinctiveness @ box {frac}: {value:.4f}")
    for tau, value in sweeps.get("comprehensiveness_by_tau", {}).items():
        print(f"  comprehensiveness @ tau {tau}: {value:.4f}")
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_json(report, sweeps))
    print(f"wrote {path}")
    return 0


def _cmd_explain(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not cfg.test:
        raise ConfigError("no test dump configured (key 'test')")
    bundle = bundle_io.read_bundle(args.bundle)
    batch = read_ptfd(cfg.test)
    ids = args.ids or list(batch.ids)
    for image_id in ids:
        paths = explain_image(bundle, batch, image_id, cfg.out, top_k=args.top_k)
        print(f"{image_id}: wrote {len(paths)} files to {cfg.out}")
    return 0


def _cmd_metrics(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    try:
        maps = np.load(args.maps)
    except (OSError, ValueError) as exc:
        raise InvalidParams(f"cannot load activation maps from {args.maps!r}: {exc}") from exc
    if maps.ndim != 4:
        raise InvalidParams(f"activation maps must be [n, K, h, w], got shape {maps.shape}")
    batch = read_ptfd(cfg.test) if cfg.test else None
    if batch is not None and batch.shape[0] != maps.shape[0]:
        raise InvalidParams("maps and test dump disagree on the number of images")
    image_size = batch.image_size if batch is not None else (args.height, args.width)
    if image_size[0] is None or image_size[1] is None:
        raise ConfigError("need --test or both --height and --width for the image size")
    maps_list = list(maps.astype(np.float64))
    dist = distinctiveness(maps_list, image_size, BoxSpec.fraction(image_size, cfg.box_frac))
    print(f"distinctiveness   {dist:.4f}  (box {cfg.box_frac} of image)")
    if batch is not None and batch.gt_masks is not None:
        comp = comprehensiveness(maps_list, list(batch.gt_masks), MaskThreshold(cfg.tau))
        print(f"comprehensiveness {comp:.4f}  (tau {cfg.tau})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protopart",
        description="Non-parametric part-prototype learning over patch-feature dumps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--out", default="synth", help="output directory")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--parts", type=int, default=3)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--n-train", dest="n_train", type=int, default=50)
    p.add_argument("--n-test", dest="n_test", type=int, default=20)
    p.add_argument("--occlusion-rate", dest="occlusion_rate", type=float, default=0.2)
    p.add_argument("--loose-directions", action="store_true",
                   help="allow random (non-orthonormalized) part directions")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("learn", help="stage 1: discover prototypes")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_learn)

    p = sub.add_parser("finetune", help="stage 2: train adapter and modulation weights")
    p.add_argument("bundle", help="stage-1 bundle file")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("eval", help="score a model on a test dump")
    p.add_argument("bundle", help="model bundle file")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("explain", help="render prototype heatmaps for images")
    p.add_argument("bundle", help="model bundle file")
    p.add_argument("--ids", nargs="*", help="image ids (default: all)")
    p.add_argument("--top-k", dest="top_k", type=int, default=None,
                   help="how many prototypes to render (default: all of the class)")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("metrics", help="score externally supplied activation maps")
    p.add_argument("--maps", required=True, help=".npy file of [n, K, h, w] maps")
    p.add_argument("--height", type=int, help="image height when no --test dump is given")
    p.add_argument("--width", type=int, help="image width when no --test dump is given")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_metrics)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
