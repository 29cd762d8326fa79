"""CLI: ``ptfd-export --backbone <name> --input <dir> [--masks <dir>] --out <file>``."""

from __future__ import annotations

import argparse
import sys

from .errors import ExporterError
from .export import build_manifest, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ptfd-export",
        description="Run a vision backbone over an image folder and write a PTFD dump",
    )
    parser.add_argument("--backbone", default="seeded-tiny",
                        help="seeded-tiny (offline), dino_vitb16, dinov2_vitb14, dinov2_vits14")
    parser.add_argument("--input", required=True, help="root folder, one subdirectory per class")
    parser.add_argument("--masks", help="optional mask root mirroring the image tree (.png files)")
    parser.add_argument("--out", required=True, help="output PTFD path")
    args = parser.parse_args(argv)
    try:
        manifest = build_manifest(args.input, args.backbone, args.masks)
        backbone = export(manifest, args.out)
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    h, w = backbone.grid
    print(f"wrote {args.out}: {len(manifest.images)} images, "
          f"{len(manifest.class_names)} classes, tokens {h}x{w}x{backbone.dim}")
    print(f"wrote {args.out}.labels.txt")
    return 0


if __name__ == "__main__":
    sys.exit(main())
