"""Explanation-quality metrics and heatmap rendering.

Two scores, both in [0, 1] and invariant to strictly monotone transforms of
the activation maps:

* distinctiveness: one minus the mean pairwise IoU of fixed-size boxes
  placed around each same-class prototype's max activation -- high when the
  class's prototypes attend to different image regions.
* comprehensiveness: mean IoU between the union of min-max-thresholded
  prototype activation masks and the ground-truth foreground -- high when
  the prototypes jointly cover the object.

Activation maps arrive at token resolution and are upsampled bilinearly
(corner-aligned) to image resolution first. Per-image evaluation is pure
and parallelizable; aggregation is a plain mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyGroundTruth, InvalidParams, InvariantViolation, IoError, KTooSmall


@dataclass(frozen=True)
class BoxSpec:
    """Fixed box size, in pixels, for distinctiveness regions."""

    h_b: int
    w_b: int

    def __post_init__(self):
        if self.h_b < 1 or self.w_b < 1:
            raise InvalidParams(f"box sides must be >= 1, got {self.h_b}x{self.w_b}")

    @staticmethod
    def fraction(image_size: tuple[int, int], frac: float = 0.25) -> "BoxSpec":
        """Box sized as a fraction of the image (defaults to a quarter)."""
        h, w = image_size
        return BoxSpec(max(1, int(h * frac)), max(1, int(w * frac)))


@dataclass(frozen=True)
class MaskThreshold:
    """Cut level in (0, 1) applied to min-max-normalized maps."""

    tau: float

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise InvalidParams(f"tau must lie strictly inside (0, 1), got {self.tau}")


def upsample_bilinear(src: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear interpolation of a [h, w] map to [H, W].

    Corners of the source grid map onto corners of the target grid; constant
    maps stay exactly constant (interpolation uses the lerp form).
    """
    src = np.asarray(src, dtype=np.float64)
    if src.ndim != 2 or src.shape[0] < 1 or src.shape[1] < 1:
        raise InvalidParams(f"expected a [h>=1, w>=1] map, got shape {src.shape}")
    h, w = src.shape
    out_h, out_w = int(target[0]), int(target[1])
    if out_h < 1 or out_w < 1:
        raise InvalidParams(f"target size must be >= 1, got {target}")
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(w - 2, 0))
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    a = src[np.ix_(y0, x0)]
    b = src[np.ix_(y0, x1)]
    c = src[np.ix_(y1, x0)]
    d = src[np.ix_(y1, x1)]
    top = a + fx * (b - a)
    bottom = c + fx * (d - c)
    return top + fy * (bottom - top)


Box = tuple[int, int, int, int]  # (top, left, height, width)


def max_box(act: np.ndarray, spec: BoxSpec) -> Box:
    """Fixed-size box centered on the argmax of an image-resolution map.

    Ties resolve to the smallest row-major index. Boxes that would stick out
    of the image are translated back inside, so the area is always
    ``h_b * w_b``.
    """
    act = np.asarray(act, dtype=np.float64)
    img_h, img_w = act.shape
    if spec.h_b > img_h or spec.w_b > img_w:
        raise InvalidParams(f"box {spec.h_b}x{spec.w_b} exceeds map {img_h}x{img_w}")
    if not np.all(np.isfinite(act)):
        raise InvalidParams("activation map contains non-finite values")
    flat = int(np.argmax(act))
    r, c = divmod(flat, img_w)
    top = min(max(r - spec.h_b // 2, 0), img_h - spec.h_b)
    left = min(max(c - spec.w_b // 2, 0), img_w - spec.w_b)
    return (top, left, spec.h_b, spec.w_b)


def box_iou(a: Box, b: Box) -> float:
    """Intersection over union of two axis-aligned boxes."""
    inter_h = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    inter_w = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    inter = max(inter_h, 0) * max(inter_w, 0)
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union else 0.0


def overlap_score(maps: np.ndarray, image_size: tuple[int, int], spec: BoxSpec) -> float:
    """Mean pairwise box IoU for one image's [K, h, w] activation maps."""
    maps = np.asarray(maps, dtype=np.float64)
    k = maps.shape[0]
    if k < 2:
        raise KTooSmall(f"need at least 2 prototypes for overlap, got K={k}")
    boxes = [max_box(upsample_bilinear(m, image_size), spec) for m in maps]
    total = 0.0
    for i in range(k - 1):
        for j in range(i + 1, k):
            total += box_iou(boxes[i], boxes[j])
    return total / (k * (k - 1) / 2)


def distinctiveness(
    activation_maps: Sequence[np.ndarray], image_size: tuple[int, int], spec: BoxSpec
) -> float:
    """One minus the mean overlap score across images.

    ``activation_maps`` holds one [K, h, w] array per image (the K maps of
    the image's ground-truth class).
    """
    if not len(activation_maps):
        raise InvalidParams("need at least one image")
    overlaps = [overlap_score(m, image_size, spec) for m in activation_maps]
    return 1.0 - float(np.mean(overlaps))


def threshold_mask(act: np.ndarray, tau: MaskThreshold) -> np.ndarray:
    """Min-max normalize then cut at tau.

    A constant map normalizes to all ones (it "attends everywhere"); the
    degenerate choice is per-image and visible in reports.
    """
    act = np.asarray(act, dtype=np.float64)
    lo = float(act.min())
    hi = float(act.max())
    if hi == lo:
        return np.ones_like(act, dtype=bool)
    return (act - lo) / (hi - lo) >= tau.tau


def union_mask(maps: np.ndarray, image_size: tuple[int, int], tau: MaskThreshold) -> np.ndarray:
    """Pixelwise union of the thresholded, upsampled maps of one image."""
    maps = np.asarray(maps, dtype=np.float64)
    out = np.zeros(image_size, dtype=bool)
    for m in maps:
        out |= threshold_mask(upsample_bilinear(m, image_size), tau)
    return out


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter / union) if union else 0.0


def comprehensiveness_detail(
    activation_maps: Sequence[np.ndarray],
    gt_masks: Sequence[np.ndarray],
    tau: MaskThreshold,
) -> tuple[list[float | None], list[int]]:
    """Per-image IoU of the thresholded-union mask against ground truth.

    Images whose ground-truth mask is empty are skipped: their entry is
    None and their index is reported in the second return value.
    """
    if len(activation_maps) != len(gt_masks):
        raise InvalidParams("need one ground-truth mask per image")
    ious: list[float | None] = []
    skipped: list[int] = []
    for idx, (maps, gt) in enumerate(zip(activation_maps, gt_masks)):
        gt = np.asarray(gt).astype(bool)
        if not gt.any():
            ious.append(None)
            skipped.append(idx)
            continue
        ious.append(mask_iou(gt, union_mask(maps, gt.shape, tau)))
    return ious, skipped


def comprehensiveness(
    activation_maps: Sequence[np.ndarray],
    gt_masks: Sequence[np.ndarray],
    tau: MaskThreshold,
) -> float:
    """Mean thresholded-union IoU over images with nonempty ground truth."""
    ious, skipped = comprehensiveness_detail(activation_maps, gt_masks, tau)
    valid = [v for v in ious if v is not None]
    if not valid:
        raise EmptyGroundTruth(f"all {len(skipped)} images have empty ground-truth masks")
    return float(np.mean(valid))


@dataclass(frozen=True)
class ImageMetrics:
    """Per-image diagnostics carried inside a MetricReport."""

    image_id: str
    overlap: float
    iou: float | None
    predicted: int
    label: int


@dataclass(frozen=True)
class MetricReport:
    """Aggregate scores plus the per-image rows they were averaged from."""

    distinctiveness: float
    comprehensiveness: float | None
    accuracy: float
    per_image: tuple[ImageMetrics, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.per_image:
            return
        overlaps = [r.overlap for r in self.per_image]
        if abs(self.distinctiveness - (1.0 - float(np.mean(overlaps)))) > 1e-12:
            raise InvariantViolation("distinctiveness does not match per-image overlaps")
        ious = [r.iou for r in self.per_image if r.iou is not None]
        if ious:
            if self.comprehensiveness is None or abs(
                self.comprehensiveness - float(np.mean(ious))
            ) > 1e-12:
                raise InvariantViolation("comprehensiveness does not match per-image IoUs")
        correct = [r.predicted == r.label for r in self.per_image]
        if abs(self.accuracy - float(np.mean(correct))) > 1e-12:
            raise InvariantViolation("accuracy does not match per-image predictions")


def render_heatmap(act: np.ndarray, out_path) -> None:
    """Write a map as an 8-bit grayscale PGM (P5) plus a raw CSV alongside.

    Pixels are ``floor(255 * normalized)`` of the min-max-normalized map; a
    constant map renders all-white. The CSV lands next to the PGM with the
    suffix swapped to ``.csv``.
    """
    act = np.asarray(act, dtype=np.float64)
    if act.ndim != 2:
        raise InvalidParams(f"expected a 2-d map, got shape {act.shape}")
    if not np.all(np.isfinite(act)):
        raise InvalidParams("map contains non-finite values")
    lo, hi = float(act.min()), float(act.max())
    norm = np.ones_like(act) if hi == lo else (act - lo) / (hi - lo)
    pixels = np.floor(norm * 255.0).astype(np.uint8)
    out_path = str(out_path)
    h, w = act.shape
    csv_path = (out_path.rsplit(".", 1)[0] if "." in out_path.rsplit("/", 1)[-1] else out_path) + ".csv"
    try:
        with open(out_path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(pixels.tobytes())
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in act:
                writer.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise IoError(f"cannot write heatmap to {out_path!r}: {exc}") from exc
